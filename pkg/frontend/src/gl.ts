/** Minimal WebGL mesh renderer: per-vertex colors, z-buffer, one program. */

import { Mesh, CameraPose } from "./bundle.js";

const VS = `
attribute vec3 aPosition;
attribute vec3 aColor;
uniform mat4 uProjView;
varying vec3 vColor;
void main() {
  vColor = aColor;
  gl_Position = uProjView * vec4(aPosition, 1.0);
}
`;

const FS = `
precision mediump float;
varying vec3 vColor;
void main() { gl_FragColor = vec4(vColor, 1.0); }
`;

export class MeshRenderer {
  private gl: WebGLRenderingContext;
  private program: WebGLProgram;
  private positionBuffer: WebGLBuffer;
  private colorBuffer: WebGLBuffer;
  private indexBuffer: WebGLBuffer;
  private indexCount: number;
  private aPosition: number;
  private aColor: number;
  private uProjView: WebGLUniformLocation;

  constructor(canvas: HTMLCanvasElement, mesh: Mesh) {
    const gl = canvas.getContext("webgl");
    if (!gl) throw new Error("WebGL unavailable");
    this.gl = gl;
    this.program = buildProgram(gl, VS, FS);
    this.aPosition = gl.getAttribLocation(this.program, "aPosition");
    this.aColor = gl.getAttribLocation(this.program, "aColor");
    this.uProjView = gl.getUniformLocation(this.program, "uProjView")!;

    this.positionBuffer = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.positionBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, mesh.positions, gl.STATIC_DRAW);

    this.colorBuffer = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, mesh.diffuse, gl.DYNAMIC_DRAW);

    this.indexBuffer = gl.createBuffer()!;
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.indexBuffer);
    // Uint32 indices need OES_element_index_uint on WebGL1
    if (mesh.vertexCount > 65535 && !gl.getExtension("OES_element_index_uint")) {
      throw new Error("mesh too large for this WebGL context");
    }
    if (mesh.vertexCount > 65535) {
      gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, mesh.faces, gl.STATIC_DRAW);
    } else {
      gl.bufferData(gl.ELEMENT_ARRAY_BUFFER,
                    Uint16Array.from(mesh.faces), gl.STATIC_DRAW);
    }
    this.indexCount = mesh.faces.length;
    this.use32 = mesh.vertexCount > 65535;

    gl.enable(gl.DEPTH_TEST);
    gl.clearColor(0.08, 0.09, 0.11, 1.0);
  }

  private use32: boolean;

  updateColors(colors: Float32Array): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuffer);
    gl.bufferSubData(gl.ARRAY_BUFFER, 0, colors);
  }

  draw(camera: CameraPose, near = 0.01, far = 100.0): void {
    const gl = this.gl;
    gl.viewport(0, 0, gl.drawingBufferWidth, gl.drawingBufferHeight);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.useProgram(this.program);
    gl.uniformMatrix4fv(this.uProjView, false, projView(camera, near, far));

    gl.bindBuffer(gl.ARRAY_BUFFER, this.positionBuffer);
    gl.enableVertexAttribArray(this.aPosition);
    gl.vertexAttribPointer(this.aPosition, 3, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuffer);
    gl.enableVertexAttribArray(this.aColor);
    gl.vertexAttribPointer(this.aColor, 3, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.indexBuffer);
    gl.drawElements(gl.TRIANGLES, this.indexCount,
                    this.use32 ? gl.UNSIGNED_INT : gl.UNSIGNED_SHORT, 0);
  }
}

/** Column-major proj*view matrix from the pinhole pose (y-down pixels). */
export function projView(cam: CameraPose, near: number, far: number): Float32Array {
  const { K, R, t, width, height } = cam;
  const fx = K[0], fy = K[4];
  // OpenGL clip-space projection equivalent to the pinhole model
  const proj = [
    2 * fx / width, 0, 0, 0,
    0, -2 * fy / height, 0, 0,
    2 * (K[2] / width) - 1, 1 - 2 * (K[5] / height), (far + near) / (far - near), 1,
    0, 0, -2 * far * near / (far - near), 0,
  ];
  // view = [R | t] as 4x4 column-major
  const view = [
    R[0], R[3], R[6], 0,
    R[1], R[4], R[7], 0,
    R[2], R[5], R[8], 0,
    t[0], t[1], t[2], 1,
  ];
  // out = proj * view
  const out = new Float32Array(16);
  for (let c = 0; c < 4; c++) {
    for (let r = 0; r < 4; r++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += proj[k * 4 + r] * view[c * 4 + k];
      out[c * 4 + r] = s;
    }
  }
  return out;
}

function buildProgram(gl: WebGLRenderingContext, vs: string, fs: string): WebGLProgram {
  const compile = (type: number, src: string) => {
    const shader = gl.createShader(type)!;
    gl.shaderSource(shader, src);
    gl.compileShader(shader);
    if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
      throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
    }
    return shader;
  };
  const program = gl.createProgram()!;
  gl.attachShader(program, compile(gl.VERTEX_SHADER, vs));
  gl.attachShader(program, compile(gl.FRAGMENT_SHADER, fs));
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new Error(gl.getProgramInfoLog(program) ?? "program link failed");
  }
  return program;
}
