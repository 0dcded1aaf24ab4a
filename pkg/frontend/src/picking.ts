// Hover picking against ring centers. Exact triangle intersection is
// overkill for a readout; the nearest ring along the ray within its
// own radius is what the analyst is pointing at.

import type { ParsedScene } from "./meshdoc.js";
import type { Ray } from "./camera.js";

export interface PickHit {
  tubeIndex: number;
  ringIndex: number;
  magnitude: number;
  symmetry: number;
  /** Distance along the ray to the ring center's closest approach. */
  rayT: number;
}

const RADIUS_SLACK = 1.25;

export function pickRing(scene: ParsedScene, ray: Ray): PickHit | null {
  const [ox, oy, oz] = ray.origin;
  const [dx, dy, dz] = ray.dir;
  let best: PickHit | null = null;
  for (let ti = 0; ti < scene.tubes.length; ti++) {
    const tube = scene.tubes[ti];
    const centers = tube.ringCenters;
    for (let r = 0; r < tube.nRings; r++) {
      const cx = centers[3 * r] - ox;
      const cy = centers[3 * r + 1] - oy;
      const cz = centers[3 * r + 2] - oz;
      const t = cx * dx + cy * dy + cz * dz;
      if (t <= 0) continue; // behind the camera
      const px = cx - t * dx;
      const py = cy - t * dy;
      const pz = cz - t * dz;
      const miss = Math.hypot(px, py, pz);
      if (miss > tube.ringRadii[r] * RADIUS_SLACK + 1e-9) continue;
      if (best === null || t < best.rayT) {
        best = {
          tubeIndex: ti,
          ringIndex: r,
          magnitude: tube.magnitude[r],
          symmetry: tube.symmetry[r],
          rayT: t,
        };
      }
    }
  }
  return best;
}
