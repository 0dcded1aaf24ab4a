// The case table is generated by scripts/make_fixtures.py, which runs
// every query through the service's own parser and records its verdict.
// Parity here means: same accept/reject decision on every case, and the
// exact server error text among the client's issues unless the case is
// flagged as differently worded.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { validateQuery } from "../src/validate.js";

interface Case {
  name: string;
  query: unknown;
  rejected: boolean;
  detail: string | null;
  texts_match: boolean;
}

const { cases } = JSON.parse(
  readFileSync(new URL("./fixtures/validation_cases.json", import.meta.url), "utf-8"),
) as { cases: Case[] };

describe("validateQuery mirrors the service verdict table", () => {
  for (const c of cases) {
    it(c.name, () => {
      const issues = validateQuery(c.query);
      expect(issues.length > 0, issues.map((i) => i.message).join("; ")).toBe(c.rejected);
      if (c.rejected && c.texts_match) {
        expect(issues.map((i) => i.message)).toContain(c.detail);
      }
    });
  }

  it("exercises both verdicts across a broad table", () => {
    expect(cases.length).toBeGreaterThanOrEqual(70);
    expect(cases.filter((c) => c.rejected).length).toBeGreaterThanOrEqual(50);
    expect(cases.filter((c) => !c.rejected).length).toBeGreaterThanOrEqual(10);
  });

  it("tags every issue with a field the panel can highlight", () => {
    for (const c of cases) {
      for (const issue of validateQuery(c.query)) {
        expect(typeof issue.field).toBe("string");
        expect(issue.message.length).toBeGreaterThan(0);
      }
    }
  });
});
