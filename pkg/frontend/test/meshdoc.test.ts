import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { parseMeshDocument, sceneHash, vertexRing } from "../src/meshdoc.js";
import type { MeshDocumentJson } from "../src/types.js";

function loadDoc(): MeshDocumentJson {
  return JSON.parse(
    readFileSync(new URL("./fixtures/sample_doc.json", import.meta.url), "utf-8"),
  ) as MeshDocumentJson;
}

describe("parseMeshDocument", () => {
  it("produces typed buffers with consistent lengths", () => {
    const scene = parseMeshDocument(loadDoc());
    expect(scene.tubes.length).toBe(2);
    for (const tube of scene.tubes) {
      const nVerts = 1 + tube.nRings * tube.ringSamples;
      expect(tube.vertices).toBeInstanceOf(Float32Array);
      expect(tube.indices).toBeInstanceOf(Uint32Array);
      expect(tube.vertices.length).toBe(3 * nVerts);
      expect(tube.normals.length).toBe(3 * nVerts);
      expect(tube.uvs.length).toBe(2 * nVerts);
      expect(tube.colors.length).toBe(4 * nVerts);
      expect(tube.magnitude.length).toBe(tube.nRings);
      expect(tube.symmetry.length).toBe(tube.nRings);
      expect(tube.indices.length % 3).toBe(0);
      for (const idx of tube.indices) {
        expect(idx).toBeLessThan(nVerts);
      }
    }
  });

  it("keeps the apex vertex at the seed", () => {
    const scene = parseMeshDocument(loadDoc());
    for (const tube of scene.tubes) {
      for (let k = 0; k < 3; k++) {
        expect(tube.vertices[k]).toBeCloseTo(tube.seed[k], 6);
      }
    }
  });

  it("derives ring centers from the documented vertex layout", () => {
    const scene = parseMeshDocument(loadDoc());
    const tube = scene.tubes[0];
    const m = tube.ringSamples;
    // independent accumulation routed through vertexRing
    const sums = new Float64Array(3 * tube.nRings);
    const counts = new Uint32Array(tube.nRings);
    const nVerts = 1 + tube.nRings * m;
    for (let v = 1; v < nVerts; v++) {
      const r = vertexRing(v, m);
      counts[r] += 1;
      for (let k = 0; k < 3; k++) sums[3 * r + k] += tube.vertices[3 * v + k];
    }
    for (let r = 0; r < tube.nRings; r++) {
      expect(counts[r]).toBe(m);
      for (let k = 0; k < 3; k++) {
        expect(tube.ringCenters[3 * r + k]).toBeCloseTo(sums[3 * r + k] / m, 5);
      }
    }
    // every sample sits within the reported ring radius
    for (let v = 1; v < nVerts; v++) {
      const r = vertexRing(v, m);
      const d = Math.hypot(
        tube.vertices[3 * v] - tube.ringCenters[3 * r],
        tube.vertices[3 * v + 1] - tube.ringCenters[3 * r + 1],
        tube.vertices[3 * v + 2] - tube.ringCenters[3 * r + 2],
      );
      expect(d).toBeLessThanOrEqual(tube.ringRadii[r] + 1e-6);
    }
  });

  it("rejects malformed documents", () => {
    const docA = loadDoc();
    docA.meshes[0].vertices = docA.meshes[0].vertices.slice(0, -3);
    expect(() => parseMeshDocument(docA)).toThrow(/malformed mesh document/);

    const docB = loadDoc();
    docB.meshes[1].indices[0] = 10_000_000;
    expect(() => parseMeshDocument(docB)).toThrow(/out of range/);

    const docC = loadDoc();
    docC.version = 2;
    expect(() => parseMeshDocument(docC)).toThrow(/unsupported version/);

    const docD = loadDoc();
    docD.meshes[0].magnitude = docD.meshes[0].magnitude.slice(0, 1);
    expect(() => parseMeshDocument(docD)).toThrow(/magnitude length/);
  });
});

describe("sceneHash", () => {
  it("is deterministic across parses", () => {
    const a = sceneHash(parseMeshDocument(loadDoc()));
    const b = sceneHash(parseMeshDocument(loadDoc()));
    expect(a).toBe(b);
    expect(a).toMatch(/^[0-9a-f]{16}$/);
  });

  it("changes when any buffer changes", () => {
    const reference = sceneHash(parseMeshDocument(loadDoc()));
    const fields = ["vertices", "normals", "uvs", "colors", "magnitude", "symmetry"] as const;
    for (const field of fields) {
      const doc = loadDoc();
      doc.meshes[1][field][0] += 0.25;
      expect(sceneHash(parseMeshDocument(doc)), field).not.toBe(reference);
    }
    const doc = loadDoc();
    const tri = doc.meshes[0].indices;
    [tri[0], tri[1]] = [tri[1], tri[0]];
    expect(sceneHash(parseMeshDocument(doc))).not.toBe(reference);
  });

  it("ignores object identity, not content", () => {
    const doc = loadDoc();
    const copy = JSON.parse(JSON.stringify(doc)) as MeshDocumentJson;
    expect(sceneHash(parseMeshDocument(copy))).toBe(sceneHash(parseMeshDocument(doc)));
  });
});

describe("vertexRing", () => {
  it("maps the apex and ring blocks", () => {
    expect(vertexRing(0, 12)).toBe(0);
    expect(vertexRing(1, 12)).toBe(0);
    expect(vertexRing(12, 12)).toBe(0);
    expect(vertexRing(13, 12)).toBe(1);
    expect(vertexRing(1 + 5 * 12, 12)).toBe(5);
    expect(vertexRing(1 + 6 * 12 - 1, 12)).toBe(5);
  });
});
