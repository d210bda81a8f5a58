/**
 * The per-vertex coloring pipeline, a faithful re-implementation of the
 * reference renderer: back-face culling by geometric face normals, unit view
 * directions toward the camera center, inverse reflection about the vertex
 * normal, (2u-1, 2v-1, d) encoding, one batched forward pass, residual
 * decode (2q - 1), diffuse add, clamp. Vertices outside the inference set
 * (back-facing faces only, or n.d <= 0) keep their diffuse color.
 */

import { Mesh, CameraPose } from "./bundle.js";
import { Net, forward } from "./dnet.js";

export function cameraCenter(cam: CameraPose): [number, number, number] {
  // center = -R^T t
  const { R, t } = cam;
  return [
    -(R[0] * t[0] + R[3] * t[1] + R[6] * t[2]),
    -(R[1] * t[0] + R[4] * t[1] + R[7] * t[2]),
    -(R[2] * t[0] + R[5] * t[1] + R[8] * t[2]),
  ];
}

export interface InferenceResult {
  colors: Float32Array;   // (V, 3) clamped
  visibleVertexCount: number;
  inferredVertexCount: number;
}

export function vertexColors(mesh: Mesh, net: Net, cam: CameraPose): InferenceResult {
  const v = mesh.vertexCount;
  const { positions, normals, uvs, faces, diffuse } = mesh;
  const colors = new Float32Array(3 * v);
  for (let i = 0; i < 3 * v; i++) {
    colors[i] = Math.min(1, Math.max(0, diffuse[i]));
  }

  const center = cameraCenter(cam);
  const visible = new Uint8Array(v);
  for (let f = 0; f < mesh.faceCount; f++) {
    const a = faces[3 * f], b = faces[3 * f + 1], c = faces[3 * f + 2];
    const ax = positions[3 * a], ay = positions[3 * a + 1], az = positions[3 * a + 2];
    const e1x = positions[3 * b] - ax, e1y = positions[3 * b + 1] - ay, e1z = positions[3 * b + 2] - az;
    const e2x = positions[3 * c] - ax, e2y = positions[3 * c + 1] - ay, e2z = positions[3 * c + 2] - az;
    const nx = e1y * e2z - e1z * e2y;
    const ny = e1z * e2x - e1x * e2z;
    const nz = e1x * e2y - e1y * e2x;
    const cx = (ax + positions[3 * b] + positions[3 * c]) / 3;
    const cy = (ay + positions[3 * b + 1] + positions[3 * c + 1]) / 3;
    const cz = (az + positions[3 * b + 2] + positions[3 * c + 2]) / 3;
    const dot = nx * (center[0] - cx) + ny * (center[1] - cy) + nz * (center[2] - cz);
    if (dot > 0) {
      visible[a] = visible[b] = visible[c] = 1;
    }
  }

  // collect inference rows for front-facing visible vertices
  const ids: number[] = [];
  const rows: number[] = [];
  for (let i = 0; i < v; i++) {
    if (!visible[i]) continue;
    let dx = center[0] - positions[3 * i];
    let dy = center[1] - positions[3 * i + 1];
    let dz = center[2] - positions[3 * i + 2];
    const len = Math.hypot(dx, dy, dz);
    if (len === 0) continue;
    dx /= len; dy /= len; dz /= len;
    const nx = normals[3 * i], ny = normals[3 * i + 1], nz = normals[3 * i + 2];
    const nd = nx * dx + ny * dy + nz * dz;
    if (nd <= 0) continue; // silhouette-grazing: diffuse only
    const tx = 2 * nd * nx - dx;
    const ty = 2 * nd * ny - dy;
    const tz = 2 * nd * nz - dz;
    ids.push(i);
    rows.push(2 * uvs[2 * i] - 1, 2 * uvs[2 * i + 1] - 1, tx, ty, tz);
  }

  if (ids.length) {
    const q = forward(net, Float64Array.from(rows), ids.length);
    for (let k = 0; k < ids.length; k++) {
      const i = ids[k];
      for (let c = 0; c < 3; c++) {
        // predictions quantized to f32 like the reference path, then the
        // residual decode 2q - 1 and the diffuse add
        const qf = Math.fround(q[3 * k + c]);
        const value = diffuse[3 * i + c] + (2 * qf - 1);
        colors[3 * i + c] = Math.min(1, Math.max(0, value));
      }
    }
  }
  let visCount = 0;
  for (let i = 0; i < v; i++) visCount += visible[i];
  return { colors, visibleVertexCount: visCount, inferredVertexCount: ids.length };
}
