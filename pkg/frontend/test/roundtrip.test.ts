// End-to-end check against a live service process: the same query twice
// must hash to the same scene, picking must report the stats the server
// shipped, and a too-small member count must be rejected on both sides
// with the same wording. Skips when the service CLI is not installed.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { existsSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { QueryRejected, ServiceClient } from "../src/client.js";
import { parseMeshDocument, sceneHash } from "../src/meshdoc.js";
import { pickRing } from "../src/picking.js";
import { validateQuery } from "../src/validate.js";
import type { TubeQuery } from "../src/types.js";

const MODELS_DIR = fileURLToPath(new URL("./fixtures/models", import.meta.url));

const HAVE_SERVICE = (() => {
  if (!existsSync(`${MODELS_DIR}/tiny.utnn`)) return false;
  try {
    execFileSync("uncertube", ["--help"], { stdio: "ignore", timeout: 30_000 });
    return true;
  } catch {
    return false;
  }
})();

const QUERY: TubeQuery = {
  method: "dropout",
  model: "tiny",
  seed_box: [[-0.4, 0.4], [-0.4, 0.4], [-1.0, -0.9]],
  count: 3,
  n_samples: 4,
  n_steps: 6,
  rng_seed: 11,
  m: 8,
  tau: 3,
};

describe.skipIf(!HAVE_SERVICE)("live service round trip", () => {
  let proc: ChildProcess;
  let client: ServiceClient;

  beforeAll(async () => {
    const port = 8900 + Math.floor(Math.random() * 500);
    proc = spawn(
      "uncertube",
      ["serve", "--models", MODELS_DIR, "--port", String(port), "--threads", "1"],
      { stdio: "ignore" },
    );
    client = new ServiceClient(`http://127.0.0.1:${port}`);
    const deadline = Date.now() + 30_000;
    for (;;) {
      try {
        await client.health();
        return;
      } catch {
        if (Date.now() > deadline) throw new Error("service did not come up");
        await new Promise((r) => setTimeout(r, 150));
      }
    }
  }, 45_000);

  afterAll(() => {
    proc?.kill("SIGTERM");
  });

  it("hashes the same scene for the same query, twice", async () => {
    const a = parseMeshDocument(await client.submitQuery(QUERY));
    const b = parseMeshDocument(await client.submitQuery(QUERY));
    expect(sceneHash(a)).toBe(sceneHash(b));
    expect(a.tubes.length).toBe(QUERY.count); // one tube per seed
  }, 30_000);

  it("lists the fixture model", async () => {
    const models = await client.models();
    expect(models.map((m) => m.name)).toContain("tiny");
  }, 30_000);

  it("picks up exactly the per-ring stats the server shipped", async () => {
    const doc = await client.submitQuery(QUERY);
    const scene = parseMeshDocument(doc);
    for (const tube of scene.tubes) {
      for (let r = 0; r < tube.nRings; r++) {
        const cx = tube.ringCenters[3 * r];
        const cy = tube.ringCenters[3 * r + 1];
        const cz = tube.ringCenters[3 * r + 2];
        const hit = pickRing(scene, { origin: [cx, cy, cz - 0.005], dir: [0, 0, 1] });
        expect(hit).not.toBeNull();
        const wire = doc.meshes[hit!.tubeIndex];
        expect(hit!.magnitude).toBeCloseTo(wire.magnitude[hit!.ringIndex], 6);
        expect(hit!.symmetry).toBeCloseTo(wire.symmetry[hit!.ringIndex], 6);
      }
    }
  }, 30_000);

  it("rejects a 1-member query identically to the server", async () => {
    const bad = { ...QUERY, n_samples: 1 };
    const local = validateQuery(bad);
    expect(local.length).toBe(1);
    const err = await client.submitQuery(bad).catch((e) => e);
    expect(err).toBeInstanceOf(QueryRejected);
    expect(err.status).toBe(400);
    expect(err.detail).toBe(local[0].message);
  }, 30_000);
});
