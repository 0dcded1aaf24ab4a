// Orbit camera math kept free of DOM so the ray logic is testable.
// Matrices are column-major, matching WebGL uniform upload order.

export interface Ray {
  origin: [number, number, number];
  dir: [number, number, number];
}

function normalize(v: [number, number, number]): [number, number, number] {
  const len = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / len, v[1] / len, v[2] / len];
}

function cross(
  a: [number, number, number],
  b: [number, number, number],
): [number, number, number] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export class OrbitCamera {
  target: [number, number, number] = [0, 0, 0];
  yaw = 0.6;
  pitch = 0.4;
  distance = 4;
  fovY = (45 * Math.PI) / 180;
  aspect = 1;
  near = 0.01;
  far = 100;

  eye(): [number, number, number] {
    const cp = Math.cos(this.pitch);
    return [
      this.target[0] + this.distance * cp * Math.sin(this.yaw),
      this.target[1] + this.distance * Math.sin(this.pitch),
      this.target[2] + this.distance * cp * Math.cos(this.yaw),
    ];
  }

  orbit(dYaw: number, dPitch: number): void {
    this.yaw += dYaw;
    const limit = Math.PI / 2 - 0.01;
    this.pitch = Math.min(limit, Math.max(-limit, this.pitch + dPitch));
  }

  zoom(factor: number): void {
    this.distance = Math.min(50, Math.max(0.1, this.distance * factor));
  }

  basis(): {
    forward: [number, number, number];
    right: [number, number, number];
    up: [number, number, number];
  } {
    const eye = this.eye();
    const forward = normalize([
      this.target[0] - eye[0],
      this.target[1] - eye[1],
      this.target[2] - eye[2],
    ]);
    const right = normalize(cross(forward, [0, 1, 0]));
    const up = cross(right, forward);
    return { forward, right, up };
  }

  viewMatrix(): Float32Array {
    const eye = this.eye();
    const { forward, right, up } = this.basis();
    const [ex, ey, ez] = eye;
    return new Float32Array([
      right[0], up[0], -forward[0], 0,
      right[1], up[1], -forward[1], 0,
      right[2], up[2], -forward[2], 0,
      -(right[0] * ex + right[1] * ey + right[2] * ez),
      -(up[0] * ex + up[1] * ey + up[2] * ez),
      forward[0] * ex + forward[1] * ey + forward[2] * ez,
      1,
    ]);
  }

  projMatrix(): Float32Array {
    const f = 1 / Math.tan(this.fovY / 2);
    const { near, far } = this;
    const out = new Float32Array(16);
    out[0] = f / this.aspect;
    out[5] = f;
    out[10] = (far + near) / (near - far);
    out[11] = -1;
    out[14] = (2 * far * near) / (near - far);
    return out;
  }

  /** World-space picking ray through normalized device coords in [-1, 1]. */
  rayFromNdc(nx: number, ny: number): Ray {
    const { forward, right, up } = this.basis();
    const halfH = Math.tan(this.fovY / 2);
    const halfW = halfH * this.aspect;
    const dir = normalize([
      forward[0] + nx * halfW * right[0] + ny * halfH * up[0],
      forward[1] + nx * halfW * right[1] + ny * halfH * up[1],
      forward[2] + nx * halfW * right[2] + ny * halfH * up[2],
    ]);
    return { origin: this.eye(), dir };
  }
}
