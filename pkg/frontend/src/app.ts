/**
 * Single-page shell: login, job inbox, outcome forms, item browser.
 * Hash routes: #/inbox (default), #/items/<ref>, #/descriptions.
 * All state lives server-side; every view re-fetches on entry, so a
 * browser refresh is always safe.
 */

import { ApiClient, ApiError, JobEntry } from "./api.js";
import { itemBrowser } from "./browser.js";
import { FormModel, buildDocument } from "./form.js";
import { JobInbox, StaleJobError } from "./inbox.js";
import {
  readFormValues,
  renderFormHtml,
  renderHistoryHtml,
  renderPropertiesHtml,
  renderWorkflowHtml,
} from "./dom.js";
import { escapeText } from "./xml.js";

const api = new ApiClient(window.location.origin);
const inbox = new JobInbox(api);

function el(id: string): HTMLElement {
  return document.getElementById(id)!;
}

function note(text: string, kind: "ok" | "error" = "ok"): void {
  const bar = el("notice");
  bar.textContent = text;
  bar.className = kind;
  bar.hidden = false;
  setTimeout(() => { bar.hidden = true; }, 4000);
}

async function showLogin(): Promise<void> {
  el("view").innerHTML = `
    <form id="login-form" class="login">
      <label>Agent <input name="agent" value="root"/></label>
      <label>Secret <input name="secret" type="password"/></label>
      <button type="submit">Log in</button>
    </form>`;
  el("login-form").addEventListener("submit", async (event) => {
    event.preventDefault();
    const form = event.target as HTMLFormElement;
    const agent = (form.elements.namedItem("agent") as HTMLInputElement).value;
    const secret = (form.elements.namedItem("secret") as HTMLInputElement).value;
    try {
      await api.login(agent, secret);
      window.location.hash = "#/inbox";
      await route();
    } catch (error) {
      note(error instanceof ApiError ? error.message : String(error), "error");
    }
  });
}

function jobRow(job: JobEntry, index: number): string {
  const schema = job.outcome_schema ? ` → ${job.outcome_schema[0]}` : "";
  return `<li><button data-job="${index}" class="job">` +
         `${escapeText(job.item_name)} · ${escapeText(job.activity)} · ` +
         `${escapeText(job.transition)}${escapeText(schema)}</button></li>`;
}

async function showInbox(): Promise<void> {
  await inbox.refresh();
  const rows = inbox.jobs.map(jobRow).join("");
  el("view").innerHTML =
    `<h2>Jobs (${inbox.jobs.length})</h2><ul class="inbox">${rows}</ul>` +
    '<div id="job-form"></div>';
  document.querySelectorAll("button.job").forEach((button) => {
    button.addEventListener("click", () =>
      openJob(inbox.jobs[Number((button as HTMLElement).dataset["job"])]!));
  });
}

async function openJob(job: JobEntry): Promise<void> {
  const opened = await inbox.open(job);
  const target = el("job-form");
  if (!opened.form) {
    target.innerHTML =
      `<p>Confirm ${escapeText(job.transition)} of ${escapeText(job.activity)}?` +
      ' <button id="confirm">Go</button></p>';
    el("confirm").addEventListener("click", () => runJob(job, undefined));
    return;
  }
  const model = opened.form;
  target.innerHTML = `<h3>${escapeText(job.activity)}: ${escapeText(
    job.outcome_schema![0])}</h3>${renderFormHtml(model)}`;
  target.querySelector("form")!.addEventListener("submit", (event) => {
    event.preventDefault();
    const formEl = event.target as HTMLFormElement;
    let outcome: string;
    if (model.supported) {
      outcome = buildDocument(model, readFormValues(formEl, model));
    } else {
      outcome = (formEl.elements.namedItem("raw-document") as HTMLTextAreaElement).value;
    }
    void runJob(job, outcome, model, formEl);
  });
}

async function runJob(job: JobEntry, outcome: string | undefined,
                      model?: FormModel, formEl?: HTMLFormElement): Promise<void> {
  try {
    if (model && model.supported && formEl && outcome) {
      const { validateValues } = await import("./form.js");
      const problems = validateValues(model, readFormValues(formEl, model));
      if (problems.length > 0) {
        const box = formEl.querySelector(".form-errors") as HTMLElement;
        box.textContent = problems.join("; ");
        box.hidden = false;
        return;
      }
    }
    await inbox.execute(job, outcome);
    note(`${job.activity} ${job.transition} done`);
  } catch (error) {
    if (error instanceof StaleJobError) {
      note("that job was just taken by another session; list refreshed", "error");
    } else if (error instanceof ApiError) {
      note(`${error.code}: ${error.message}`, "error");
    } else {
      throw error;
    }
  }
  await showInbox();
}

async function showItem(ref: string): Promise<void> {
  const views = await itemBrowser(api, decodeURIComponent(ref));
  el("view").innerHTML = `
    <h2>${escapeText(views.summary.name)} <small>(${escapeText(views.summary.type)})</small></h2>
    <section><h3>Properties</h3>${renderPropertiesHtml(views.properties)}</section>
    <section><h3>Workflow</h3>${renderWorkflowHtml(views.workflow)}</section>
    <section><h3>Collections</h3>${views.collections.map((c) =>
      `<h4>${escapeText(c.name)} v${c.version}</h4><ul>${c.slots.map((s) =>
        `<li>slot ${s.id} [${escapeText(s.constraintText)}] → ${
          s.member ? `<a href="${s.memberLink}">${escapeText(s.member)}</a>` : "empty"
        }</li>`).join("")}</ul>`).join("") || "none"}</section>
    <section><h3>History (${views.history.length})</h3>${renderHistoryHtml(views.history)}</section>`;
}

async function showDescriptions(): Promise<void> {
  const kinds = ["item-type", "composite", "elementary", "schema", "script",
                 "collection"];
  const prefixes: Record<string, string> = {
    "item-type": "/desc/types/", composite: "/desc/composites/",
    elementary: "/desc/activities/", schema: "/desc/schemas/",
    script: "/desc/scripts/", collection: "/desc/collections/",
  };
  const sections = await Promise.all(kinds.map(async (kind) => {
    const entries = await api.listItems(prefixes[kind]!);
    const rows = entries.map((entry) =>
      `<li><a href="#/items/${encodeURIComponent(entry.name)}">` +
      `${escapeText(entry.name)}</a></li>`).join("");
    return `<section><h3>${kind}</h3><ul>${rows}</ul></section>`;
  }));
  el("view").innerHTML = `<h2>Descriptions</h2>${sections.join("")}`;
}

async function route(): Promise<void> {
  if (!api.token) {
    await showLogin();
    return;
  }
  const hash = window.location.hash || "#/inbox";
  try {
    if (hash.startsWith("#/items/")) {
      await showItem(hash.slice("#/items/".length));
    } else if (hash === "#/descriptions") {
      await showDescriptions();
    } else {
      await showInbox();
    }
  } catch (error) {
    if (error instanceof ApiError) {
      el("view").innerHTML = `<p class="error">${escapeText(
        `${error.code}: ${error.message}`)}</p>`;
    } else {
      throw error;
    }
  }
}

window.addEventListener("hashchange", () => { void route(); });
window.addEventListener("DOMContentLoaded", () => { void route(); });
