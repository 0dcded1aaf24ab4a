// WebGL2 scene: one VAO per tube, per-vertex colors, headlight
// lambert shading. replaceScene swaps the whole tube set atomically so
// a half-uploaded response can never mix with the previous one.

import type { ParsedScene, ParsedTube } from "./meshdoc.js";
import { OrbitCamera } from "./camera.js";

const VERT = `#version 300 es
layout(location = 0) in vec3 aPos;
layout(location = 1) in vec3 aNormal;
layout(location = 2) in vec4 aColor;
uniform mat4 uView;
uniform mat4 uProj;
out vec3 vNormal;
out vec4 vColor;
void main() {
  vNormal = aNormal;
  vColor = aColor;
  gl_Position = uProj * uView * vec4(aPos, 1.0);
}`;

const FRAG = `#version 300 es
precision highp float;
in vec3 vNormal;
in vec4 vColor;
uniform vec3 uLightDir;
out vec4 outColor;
void main() {
  float lambert = abs(dot(normalize(vNormal), uLightDir));
  float shade = 0.35 + 0.65 * lambert;
  outColor = vec4(vColor.rgb * shade, vColor.a);
}`;

interface GpuTube {
  vao: WebGLVertexArrayObject;
  buffers: WebGLBuffer[];
  indexCount: number;
}

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type);
  if (!shader) throw new Error("shader allocation failed");
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

export class TubeScene {
  readonly camera = new OrbitCamera();
  private readonly gl: WebGL2RenderingContext;
  private readonly program: WebGLProgram;
  private readonly uView: WebGLUniformLocation;
  private readonly uProj: WebGLUniformLocation;
  private readonly uLight: WebGLUniformLocation;
  private tubes: GpuTube[] = [];

  constructor(canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2");
    if (!gl) throw new Error("WebGL2 is required");
    this.gl = gl;
    const program = gl.createProgram();
    if (!program) throw new Error("program allocation failed");
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    this.program = program;
    this.uView = gl.getUniformLocation(program, "uView")!;
    this.uProj = gl.getUniformLocation(program, "uProj")!;
    this.uLight = gl.getUniformLocation(program, "uLightDir")!;
    gl.enable(gl.DEPTH_TEST);
    gl.clearColor(0.07, 0.07, 0.09, 1.0);
  }

  private upload(tube: ParsedTube): GpuTube {
    const gl = this.gl;
    const vao = gl.createVertexArray()!;
    gl.bindVertexArray(vao);
    const buffers: WebGLBuffer[] = [];
    const attach = (loc: number, data: Float32Array, size: number) => {
      const buf = gl.createBuffer()!;
      buffers.push(buf);
      gl.bindBuffer(gl.ARRAY_BUFFER, buf);
      gl.bufferData(gl.ARRAY_BUFFER, data, gl.STATIC_DRAW);
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, size, gl.FLOAT, false, 0, 0);
    };
    attach(0, tube.vertices, 3);
    attach(1, tube.normals, 3);
    attach(2, tube.colors, 4);
    const ibo = gl.createBuffer()!;
    buffers.push(ibo);
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, ibo);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, tube.indices, gl.STATIC_DRAW);
    gl.bindVertexArray(null);
    return { vao, buffers, indexCount: tube.indices.length };
  }

  replaceScene(scene: ParsedScene): void {
    const fresh = scene.tubes.map((tube) => this.upload(tube));
    for (const old of this.tubes) {
      this.gl.deleteVertexArray(old.vao);
      for (const buf of old.buffers) this.gl.deleteBuffer(buf);
    }
    this.tubes = fresh;
    this.frameToFit(scene);
    this.draw();
  }

  private frameToFit(scene: ParsedScene): void {
    let lo = [Infinity, Infinity, Infinity];
    let hi = [-Infinity, -Infinity, -Infinity];
    for (const tube of scene.tubes) {
      for (let i = 0; i < tube.vertices.length; i += 3) {
        for (let k = 0; k < 3; k++) {
          lo[k] = Math.min(lo[k], tube.vertices[i + k]);
          hi[k] = Math.max(hi[k], tube.vertices[i + k]);
        }
      }
    }
    if (!Number.isFinite(lo[0])) return;
    this.camera.target = [
      (lo[0] + hi[0]) / 2,
      (lo[1] + hi[1]) / 2,
      (lo[2] + hi[2]) / 2,
    ];
    const diag = Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
    this.camera.distance = Math.max(0.5, diag * 1.4);
  }

  resize(width: number, height: number): void {
    const canvas = this.gl.canvas as HTMLCanvasElement;
    canvas.width = width;
    canvas.height = height;
    this.camera.aspect = width / Math.max(1, height);
    this.gl.viewport(0, 0, width, height);
    this.draw();
  }

  draw(): void {
    const gl = this.gl;
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.useProgram(this.program);
    gl.uniformMatrix4fv(this.uView, false, this.camera.viewMatrix());
    gl.uniformMatrix4fv(this.uProj, false, this.camera.projMatrix());
    const { forward } = this.camera.basis();
    gl.uniform3f(this.uLight, -forward[0], -forward[1], -forward[2]);
    for (const tube of this.tubes) {
      gl.bindVertexArray(tube.vao);
      gl.drawElements(gl.TRIANGLES, tube.indexCount, gl.UNSIGNED_INT, 0);
    }
    gl.bindVertexArray(null);
  }
}
