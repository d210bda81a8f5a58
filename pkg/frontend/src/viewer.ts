/**
 * Browser entry point: loads a bundle directory (static files), renders the
 * mesh with hardware rasterization, and schedules per-vertex inference in a
 * background worker every time the viewpoint settles on a new camera.
 * Orbit: drag. Zoom: wheel. Pan: shift-drag.
 */

import { loadBundle, Bundle, CameraPose } from "./bundle.js";
import { MeshRenderer } from "./gl.js";
import { InferenceScheduler } from "./scheduler.js";
import {
  OrbitState, initialOrbit, orbitPose,
  applyOrbitDrag, applyZoom, applyPan,
} from "./camera.js";

interface ColorsMessage {
  type: "colors";
  seq: number;
  colors: Float32Array;
  visibleVertexCount: number;
  inferredVertexCount: number;
  elapsedMs: number;
}

async function fetchReader(base: string) {
  return async (name: string): Promise<ArrayBuffer> => {
    const resp = await fetch(`${base}/${name}`);
    if (!resp.ok) throw new Error(`${name}: HTTP ${resp.status}`);
    return resp.arrayBuffer();
  };
}

export async function startViewer(canvas: HTMLCanvasElement, hud: HTMLElement,
                                  bundleUrl: string): Promise<void> {
  const read = await fetchReader(bundleUrl);
  let bundle: Bundle;
  try {
    bundle = await loadBundle(read);
  } catch (err) {
    hud.textContent = `bundle load failed: ${err}`;
    throw err;
  }

  const renderer = new MeshRenderer(canvas, bundle.mesh);
  let orbit: OrbitState = initialOrbit(bundle.referenceCamera);
  orbit = { ...orbit, width: canvas.width, height: canvas.height };
  let camera: CameraPose = orbitPose(orbit);
  let lastInference = { visible: 0, inferred: 0, ms: 0 };

  const worker = new Worker(new URL("./worker.js", import.meta.url),
                            { type: "module" });
  const pendingBySeq = new Map<number, (msg: ColorsMessage) => void>();
  let seqCounter = 0;
  worker.onmessage = (event: MessageEvent) => {
    const msg = event.data;
    if (msg.type === "colors") {
      const resolve = pendingBySeq.get(msg.seq);
      pendingBySeq.delete(msg.seq);
      resolve?.(msg as ColorsMessage);
    } else if (msg.type === "error") {
      hud.textContent = `inference error: ${msg.message}`;
    }
  };
  worker.postMessage({
    type: "init",
    meshBin: await read("mesh.bin"),
    netManifest: JSON.parse(new TextDecoder().decode(await read("net.json"))),
    dnet: await read("net.dnet"),
  });

  const scheduler = new InferenceScheduler<CameraPose, ColorsMessage>(
    (cam) => new Promise((resolve) => {
      const seq = ++seqCounter;
      pendingBySeq.set(seq, resolve);
      worker.postMessage({ type: "infer", seq, camera: cam });
    }),
    (msg) => {
      renderer.updateColors(msg.colors);
      lastInference = { visible: msg.visibleVertexCount,
                        inferred: msg.inferredVertexCount, ms: msg.elapsedMs };
      dirty = true;
    },
    (err) => { hud.textContent = `inference error: ${err}`; },
  );

  let dirty = true;
  let dragging = false;
  let panning = false;
  let lastX = 0;
  let lastY = 0;

  const onCameraChanged = () => {
    camera = orbitPose(orbit);
    scheduler.request(camera);
    dirty = true;
  };

  canvas.addEventListener("mousedown", (e) => {
    dragging = true;
    panning = e.shiftKey;
    lastX = e.clientX;
    lastY = e.clientY;
  });
  window.addEventListener("mouseup", () => { dragging = false; });
  window.addEventListener("mousemove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - lastX;
    const dy = e.clientY - lastY;
    lastX = e.clientX;
    lastY = e.clientY;
    orbit = panning ? applyPan(orbit, dx, dy) : applyOrbitDrag(orbit, dx, dy);
    onCameraChanged();
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    orbit = applyZoom(orbit, e.deltaY);
    onCameraChanged();
  }, { passive: false });

  // first frame: reference camera's colors via the scheduler
  scheduler.request(camera);

  let frames = 0;
  let fps = 0;
  let lastFpsStamp = performance.now();
  const tick = () => {
    if (dirty) {
      renderer.draw(camera);
      dirty = false;
    }
    frames += 1;
    const now = performance.now();
    if (now - lastFpsStamp > 500) {
      fps = (frames * 1000) / (now - lastFpsStamp);
      frames = 0;
      lastFpsStamp = now;
      hud.textContent =
        `${fps.toFixed(0)} fps | visible ${lastInference.visible} vertices | ` +
        `inference ${lastInference.ms.toFixed(0)} ms` +
        (scheduler.idle ? " (idle)" : " (running)");
    }
    requestAnimationFrame(tick);
  };
  requestAnimationFrame(tick);
}
