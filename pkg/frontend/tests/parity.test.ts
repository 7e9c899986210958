/**
 * Validator parity: the generated corpus (schemas x documents with the
 * server's verdicts baked in by scripts/gen_parity_fixture.py) must get
 * identical accept/reject decisions from the client-side validator.
 */

import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, test } from "vitest";

import { MalformedSchema, parseSchema, validateDocument } from "../src/schema.js";

interface ParityCase {
  schema: string;
  document: string;
  valid: boolean;
}

interface Fixture {
  schemas: Record<string, string>;
  cases: ParityCase[];
}

const fixturePath = fileURLToPath(new URL("./fixtures/parity.json", import.meta.url));
const fixture: Fixture = JSON.parse(readFileSync(fixturePath, "utf-8"));

describe("client/server validator parity", () => {
  test("corpus is large enough", () => {
    expect(fixture.cases.length).toBeGreaterThanOrEqual(500);
    expect(fixture.cases.filter((c) => c.valid).length).toBeGreaterThan(100);
    expect(fixture.cases.filter((c) => !c.valid).length).toBeGreaterThan(100);
  });

  test("every verdict agrees with the server", () => {
    const compiled = new Map(
      Object.entries(fixture.schemas).map(([key, doc]) => [key, parseSchema(doc)]));
    const disagreements: string[] = [];
    for (const parityCase of fixture.cases) {
      const schema = compiled.get(parityCase.schema)!;
      let clientValid: boolean;
      try {
        clientValid = validateDocument(schema, parityCase.document).length === 0;
      } catch (error) {
        if (error instanceof MalformedSchema) clientValid = false;
        else throw error;
      }
      if (clientValid !== parityCase.valid) {
        disagreements.push(
          `${parityCase.schema}: client=${clientValid} server=${parityCase.valid} ` +
          `doc=${parityCase.document.slice(0, 80)}`);
      }
    }
    expect(disagreements, disagreements.slice(0, 5).join("\n")).toHaveLength(0);
  });
});
