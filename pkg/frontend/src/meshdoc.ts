// Mesh document parsing: JSON arrays to GPU-ready typed buffers, plus
// per-ring picking metadata and a content hash for scene comparison.

import type { MeshDocumentJson, TubeMeshJson } from "./types.js";

export interface ParsedTube {
  seed: Float32Array;
  nRings: number;
  ringSamples: number;
  vertices: Float32Array; // 3 * (1 + nRings * ringSamples)
  normals: Float32Array;
  uvs: Float32Array;
  colors: Float32Array; // RGBA
  indices: Uint32Array;
  magnitude: Float32Array; // per ring
  symmetry: Float32Array;
  ringCenters: Float32Array; // 3 * nRings, derived from vertices
  ringRadii: Float32Array; // max center-to-vertex distance per ring
}

export interface ParsedScene {
  meta: MeshDocumentJson["meta"];
  tubes: ParsedTube[];
}

function expect(cond: boolean, what: string): void {
  if (!cond) throw new Error(`malformed mesh document: ${what}`);
}

function parseTube(mesh: TubeMeshJson, at: number): ParsedTube {
  const n = mesh.n_rings;
  const m = mesh.ring_samples;
  expect(Number.isInteger(n) && n >= 1, `mesh ${at}: bad n_rings`);
  expect(Number.isInteger(m) && m >= 3, `mesh ${at}: bad ring_samples`);
  const nVerts = 1 + n * m;
  expect(mesh.seed.length === 3, `mesh ${at}: seed must have 3 components`);
  expect(mesh.vertices.length === 3 * nVerts, `mesh ${at}: vertices length`);
  expect(mesh.normals.length === 3 * nVerts, `mesh ${at}: normals length`);
  expect(mesh.uvs.length === 2 * nVerts, `mesh ${at}: uvs length`);
  expect(mesh.colors.length === 4 * nVerts, `mesh ${at}: colors length`);
  expect(mesh.indices.length % 3 === 0, `mesh ${at}: indices length`);
  expect(mesh.magnitude.length === n, `mesh ${at}: magnitude length`);
  expect(mesh.symmetry.length === n, `mesh ${at}: symmetry length`);

  const vertices = Float32Array.from(mesh.vertices);
  const indices = Uint32Array.from(mesh.indices);
  for (let i = 0; i < indices.length; i++) {
    expect(indices[i] < nVerts, `mesh ${at}: index ${indices[i]} out of range`);
  }

  // Ring r occupies vertices 1 + r*m .. 1 + (r+1)*m - 1.
  const ringCenters = new Float32Array(3 * n);
  const ringRadii = new Float32Array(n);
  for (let r = 0; r < n; r++) {
    let cx = 0;
    let cy = 0;
    let cz = 0;
    const base = 1 + r * m;
    for (let j = 0; j < m; j++) {
      cx += vertices[3 * (base + j)];
      cy += vertices[3 * (base + j) + 1];
      cz += vertices[3 * (base + j) + 2];
    }
    cx /= m;
    cy /= m;
    cz /= m;
    ringCenters[3 * r] = cx;
    ringCenters[3 * r + 1] = cy;
    ringCenters[3 * r + 2] = cz;
    let worst = 0;
    for (let j = 0; j < m; j++) {
      const dx = vertices[3 * (base + j)] - cx;
      const dy = vertices[3 * (base + j) + 1] - cy;
      const dz = vertices[3 * (base + j) + 2] - cz;
      worst = Math.max(worst, Math.hypot(dx, dy, dz));
    }
    ringRadii[r] = worst;
  }

  return {
    seed: Float32Array.from(mesh.seed),
    nRings: n,
    ringSamples: m,
    vertices,
    normals: Float32Array.from(mesh.normals),
    uvs: Float32Array.from(mesh.uvs),
    colors: Float32Array.from(mesh.colors),
    indices,
    magnitude: Float32Array.from(mesh.magnitude),
    symmetry: Float32Array.from(mesh.symmetry),
    ringCenters,
    ringRadii,
  };
}

export function parseMeshDocument(doc: MeshDocumentJson): ParsedScene {
  expect(doc.version === 1, `unsupported version ${doc.version}`);
  expect(Array.isArray(doc.meshes), "meshes must be an array");
  return {
    meta: doc.meta,
    tubes: doc.meshes.map((mesh, i) => parseTube(mesh, i)),
  };
}

// FNV-1a over the little-endian bytes of every geometry buffer, in a
// fixed order. Two scenes hash equal iff their buffers are identical.
const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK = 0xffffffffffffffffn;

function fnv1a(hash: bigint, bytes: Uint8Array): bigint {
  for (let i = 0; i < bytes.length; i++) {
    hash ^= BigInt(bytes[i]);
    hash = (hash * FNV_PRIME) & MASK;
  }
  return hash;
}

export function sceneHash(scene: ParsedScene): string {
  let h = FNV_OFFSET;
  for (const tube of scene.tubes) {
    for (const buf of [
      tube.vertices,
      tube.normals,
      tube.uvs,
      tube.colors,
      tube.magnitude,
      tube.symmetry,
    ]) {
      h = fnv1a(h, new Uint8Array(buf.buffer, buf.byteOffset, buf.byteLength));
    }
    h = fnv1a(
      h,
      new Uint8Array(tube.indices.buffer, tube.indices.byteOffset, tube.indices.byteLength),
    );
  }
  return h.toString(16).padStart(16, "0");
}

/** Ring index owning a vertex; the apex (vertex 0) reports ring 0. */
export function vertexRing(vertexIndex: number, ringSamples: number): number {
  if (vertexIndex <= 0) return 0;
  return Math.floor((vertexIndex - 1) / ringSamples);
}
