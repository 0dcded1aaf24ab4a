import { describe, expect, it } from "vitest";
import { OrbitCamera } from "../src/camera.js";

function applyView(view: Float32Array, p: [number, number, number]): number[] {
  // column-major mat4 * [p, 1]
  const out = [0, 0, 0, 0];
  for (let row = 0; row < 4; row++) {
    out[row] =
      view[row] * p[0] + view[4 + row] * p[1] + view[8 + row] * p[2] + view[12 + row];
  }
  return out;
}

describe("OrbitCamera", () => {
  it("shoots the central ray from the eye toward the target", () => {
    const cam = new OrbitCamera();
    cam.target = [0.3, -0.2, 1.0];
    cam.yaw = 1.1;
    cam.pitch = -0.3;
    cam.distance = 6;
    const ray = cam.rayFromNdc(0, 0);
    const eye = cam.eye();
    expect(ray.origin).toEqual(eye);
    const towards = [
      cam.target[0] - eye[0],
      cam.target[1] - eye[1],
      cam.target[2] - eye[2],
    ];
    const len = Math.hypot(...towards);
    for (let k = 0; k < 3; k++) {
      expect(ray.dir[k]).toBeCloseTo(towards[k] / len, 12);
    }
  });

  it("keeps the eye at the configured distance", () => {
    const cam = new OrbitCamera();
    cam.distance = 7.5;
    const eye = cam.eye();
    const d = Math.hypot(
      eye[0] - cam.target[0],
      eye[1] - cam.target[1],
      eye[2] - cam.target[2],
    );
    expect(d).toBeCloseTo(7.5, 10);
  });

  it("view matrix maps the eye to the origin and the target onto -z", () => {
    const cam = new OrbitCamera();
    cam.target = [1, 2, 3];
    cam.yaw = 0.8;
    cam.pitch = 0.25;
    cam.distance = 5;
    const view = cam.viewMatrix();
    // f32 storage leaves ~1e-7 residuals on coordinates of this size
    const atEye = applyView(view, cam.eye());
    for (let k = 0; k < 3; k++) expect(atEye[k]).toBeCloseTo(0, 5);
    const atTarget = applyView(view, cam.target);
    expect(atTarget[0]).toBeCloseTo(0, 5);
    expect(atTarget[1]).toBeCloseTo(0, 5);
    expect(atTarget[2]).toBeCloseTo(-5, 5);
  });

  it("offsets NDC rays along the camera basis", () => {
    const cam = new OrbitCamera();
    const { right, up } = cam.basis();
    const center = cam.rayFromNdc(0, 0).dir;
    const rightRay = cam.rayFromNdc(1, 0).dir;
    const upRay = cam.rayFromNdc(0, 1).dir;
    const dotR =
      (rightRay[0] - center[0]) * right[0] +
      (rightRay[1] - center[1]) * right[1] +
      (rightRay[2] - center[2]) * right[2];
    const dotU =
      (upRay[0] - center[0]) * up[0] +
      (upRay[1] - center[1]) * up[1] +
      (upRay[2] - center[2]) * up[2];
    expect(dotR).toBeGreaterThan(0);
    expect(dotU).toBeGreaterThan(0);
  });

  it("clamps zoom and pitch", () => {
    const cam = new OrbitCamera();
    cam.zoom(1e9);
    expect(cam.distance).toBe(50);
    cam.zoom(1e-12);
    expect(cam.distance).toBe(0.1);
    cam.orbit(0, 100);
    expect(cam.pitch).toBeLessThan(Math.PI / 2);
    cam.orbit(0, -100);
    expect(cam.pitch).toBeGreaterThan(-Math.PI / 2);
  });

  it("is deterministic for the same pose", () => {
    const a = new OrbitCamera();
    const b = new OrbitCamera();
    for (const cam of [a, b]) {
      cam.orbit(0.3, -0.1);
      cam.zoom(1.5);
      cam.aspect = 16 / 9;
    }
    expect(Array.from(a.viewMatrix())).toEqual(Array.from(b.viewMatrix()));
    expect(Array.from(a.projMatrix())).toEqual(Array.from(b.projMatrix()));
    expect(a.rayFromNdc(0.4, -0.7)).toEqual(b.rayFromNdc(0.4, -0.7));
    expect(a.projMatrix()[11]).toBe(-1);
  });
});
