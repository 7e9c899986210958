/**
 * Job inbox against a live kernel server, including the two-session race:
 * the losing session gets IllegalTransition and an auto-refreshed list.
 */

import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { ApiClient } from "../src/api.js";
import { JobInbox, StaleJobError } from "../src/inbox.js";
import { buildDocument } from "../src/form.js";
import {
  LiveServer,
  importExchange,
  rawPost,
  startServer,
  uiDomainExchange,
} from "./server_helper.js";

let server: LiveServer;
let rootToken: string;
let itemCounter = 0;

async function newAgent(name: string, roles: string): Promise<ApiClient> {
  const secret = "pw";
  const hashResp = await rawPost(server.url, "/api/instantiate", {
    type: "Agent", name: `/agents/${name}`,
    properties: { Roles: roles },
  }, rootToken);
  expect(hashResp.ok).toBe(true);
  // Set a credential so the UI client can log in (salted hash computed
  // server-side would need the secret; store a precomputed pair instead).
  const salt = "fixedsalt";
  const { createHash } = await import("node:crypto");
  const digest = createHash("sha256").update(salt + secret).digest("hex");
  const step = await rawPost(
    server.url, `/api/items/${hashResp.item_id}/step`, {
      step: "WriteProperty",
      payload: "<write-property><name>CredentialHash</name>" +
               `<value>${salt}$${digest}</value></write-property>`,
    }, rootToken);
  expect(step.ok).toBe(true);
  const client = new ApiClient(server.url);
  await client.login(name, secret);
  return client;
}

async function newUnit(): Promise<string> {
  itemCounter += 1;
  const created = await rawPost(server.url, "/api/instantiate", {
    type: "UiUnit", name: `/ui/unit-${itemCounter}`,
  }, rootToken);
  expect(created.ok).toBe(true);
  return created.item_id;
}

beforeAll(async () => {
  server = await startServer();
  const login = await rawPost(server.url, "/api/login",
                              { agent: "root", secret: "root" });
  rootToken = login.token;
  const imported = await importExchange(server.url, rootToken, uiDomainExchange());
  expect(imported.ok).toBe(true);
}, 60_000);

afterAll(() => {
  server?.stop();
});

describe("job inbox", () => {
  test("fresh item shows one Start job for an authorized agent", async () => {
    const agent = await newAgent("inbox-a", "");
    const itemId = await newUnit();
    const inbox = new JobInbox(agent, { item: itemId });
    const jobs = await inbox.refresh();
    expect(jobs.map((j) => [j.activity, j.transition])).toEqual([["Measure", "Start"]]);
  });

  test("outcome-bearing job opens with a generated form", async () => {
    const agent = await newAgent("inbox-b", "");
    const itemId = await newUnit();
    const inbox = new JobInbox(agent, { item: itemId });
    await inbox.refresh();
    await inbox.execute(inbox.jobs[0]!); // Start needs no outcome
    const complete = inbox.jobs.find((j) => j.transition === "Complete")!;
    const opened = await inbox.open(complete);
    expect(opened.form).not.toBeNull();
    expect(opened.form!.fields.map((f) => f.path)).toEqual(["value"]);
    const outcome = buildDocument(opened.form!, { value: "55" });
    await inbox.execute(complete, outcome);
    expect(inbox.jobs).toEqual([]); // workflow reached its terminal
  });

  test("losing session gets IllegalTransition and a refreshed list", async () => {
    const first = await newAgent("race-1", "");
    const second = await newAgent("race-2", "");
    const itemId = await newUnit();
    const inboxA = new JobInbox(first, { item: itemId });
    const inboxB = new JobInbox(second, { item: itemId });
    await inboxA.refresh();
    await inboxB.refresh();
    const jobA = inboxA.jobs[0]!;
    const jobB = inboxB.jobs[0]!;
    expect(jobA.transition).toBe("Start");
    expect(jobB.transition).toBe("Start");

    await inboxA.execute(jobA); // session A wins
    let stale: StaleJobError | null = null;
    try {
      await inboxB.execute(jobB); // stale submission
    } catch (error) {
      stale = error as StaleJobError;
    }
    expect(stale).toBeInstanceOf(StaleJobError);
    // the loser's list was refreshed automatically and now offers the
    // follow-up transitions instead of the taken Start
    const transitions = inboxB.jobs.map((j) => j.transition).sort();
    expect(transitions).toEqual(["Complete", "Suspend"]);
  });

  test("refresh after another agent takes the job removes it", async () => {
    const watcher = await newAgent("watch-1", "");
    const worker = await newAgent("work-1", "");
    const itemId = await newUnit();
    const watcherInbox = new JobInbox(watcher, { item: itemId });
    await watcherInbox.refresh();
    expect(watcherInbox.jobs).toHaveLength(1);
    await worker.execute(itemId, "Measure", "Start");
    await watcherInbox.refresh();
    expect(watcherInbox.jobs.map((j) => j.transition).sort())
      .toEqual(["Complete", "Suspend"]);
  });
});
