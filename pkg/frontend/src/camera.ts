/**
 * Orbit camera: spherical coordinates around a target point, matching the
 * exporter's pose conventions (+z forward into the scene, +x right, +y down,
 * world-to-camera R/t, pixel intrinsics K with K[8] = 1).
 */

import { CameraPose } from "./bundle.js";

export interface OrbitState {
  target: [number, number, number];
  distance: number;
  azimuth: number;    // radians around world +z
  elevation: number;  // radians above the horizontal plane
  fovDeg: number;
  width: number;
  height: number;
}

export function initialOrbit(reference: CameraPose): OrbitState {
  const { R, t } = reference;
  const cx = -(R[0] * t[0] + R[3] * t[1] + R[6] * t[2]);
  const cy = -(R[1] * t[0] + R[4] * t[1] + R[7] * t[2]);
  const cz = -(R[2] * t[0] + R[5] * t[1] + R[8] * t[2]);
  const distance = Math.hypot(cx, cy, cz) || 3;
  const fov = 2 * Math.atan(0.5 * reference.width / reference.K[0]);
  return {
    target: [0, 0, 0],
    distance,
    azimuth: Math.atan2(cy, cx),
    elevation: Math.asin(Math.min(1, Math.max(-1, cz / distance))),
    fovDeg: (fov * 180) / Math.PI,
    width: reference.width,
    height: reference.height,
  };
}

export function orbitEye(state: OrbitState): [number, number, number] {
  const ce = Math.cos(state.elevation);
  return [
    state.target[0] + state.distance * ce * Math.cos(state.azimuth),
    state.target[1] + state.distance * ce * Math.sin(state.azimuth),
    state.target[2] + state.distance * Math.sin(state.elevation),
  ];
}

function normalize(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: [number, number, number], b: [number, number, number]):
    [number, number, number] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]];
}

/** Build the world-to-camera pose for the current orbit state. */
export function orbitPose(state: OrbitState): CameraPose {
  const eye = orbitEye(state);
  const fwd = normalize([state.target[0] - eye[0], state.target[1] - eye[1],
                         state.target[2] - eye[2]]);
  let up: [number, number, number] = [0, 0, 1];
  if (Math.abs(fwd[2]) > 0.999) up = [0, 1, 0];
  const right = normalize(cross(fwd, up));
  const down = cross(fwd, right);
  const R = [right[0], right[1], right[2],
             down[0], down[1], down[2],
             fwd[0], fwd[1], fwd[2]];
  const t = [
    -(R[0] * eye[0] + R[1] * eye[1] + R[2] * eye[2]),
    -(R[3] * eye[0] + R[4] * eye[1] + R[5] * eye[2]),
    -(R[6] * eye[0] + R[7] * eye[1] + R[8] * eye[2]),
  ];
  const f = 0.5 * state.width / Math.tan((state.fovDeg * Math.PI) / 360);
  const K = [f, 0, state.width / 2, 0, f, state.height / 2, 0, 0, 1];
  return { K, R, t, width: state.width, height: state.height };
}

export function applyOrbitDrag(state: OrbitState, dxPx: number, dyPx: number): OrbitState {
  const scale = 0.008;
  const elevation = Math.min(1.45, Math.max(-1.45, state.elevation + dyPx * scale));
  return { ...state, azimuth: state.azimuth - dxPx * scale, elevation };
}

export function applyZoom(state: OrbitState, wheelDelta: number): OrbitState {
  const distance = Math.min(100, Math.max(0.2,
    state.distance * Math.exp(wheelDelta * 0.001)));
  return { ...state, distance };
}

export function applyPan(state: OrbitState, dxPx: number, dyPx: number): OrbitState {
  // move the target in the camera's right/down plane
  const pose = orbitPose(state);
  const scale = state.distance * 0.0015;
  const R = pose.R;
  const target: [number, number, number] = [
    state.target[0] - (R[0] * dxPx + R[3] * dyPx) * scale,
    state.target[1] - (R[1] * dxPx + R[4] * dyPx) * scale,
    state.target[2] - (R[2] * dxPx + R[5] * dyPx) * scale,
  ];
  return { ...state, target };
}
