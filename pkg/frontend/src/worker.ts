/**
 * Inference web worker: receives the bundle payload once, then computes
 * per-vertex colors for each requested camera off the interaction thread.
 */

import { parseMeshBinary, Mesh, CameraPose } from "./bundle.js";
import { parseNet, Net, NetManifest } from "./dnet.js";
import { vertexColors } from "./inference.js";

interface InitMessage {
  type: "init";
  meshBin: ArrayBuffer;
  netManifest: NetManifest;
  dnet: ArrayBuffer;
}

interface InferMessage {
  type: "infer";
  seq: number;
  camera: CameraPose;
}

let mesh: Mesh | null = null;
let net: Net | null = null;

self.onmessage = (event: MessageEvent<InitMessage | InferMessage>) => {
  const msg = event.data;
  try {
    if (msg.type === "init") {
      mesh = parseMeshBinary(msg.meshBin);
      net = parseNet(msg.netManifest, msg.dnet);
      (self as unknown as Worker).postMessage({ type: "ready" });
      return;
    }
    if (!mesh || !net) throw new Error("worker not initialized");
    const started = performance.now();
    const result = vertexColors(mesh, net, msg.camera);
    (self as unknown as Worker).postMessage(
      {
        type: "colors",
        seq: msg.seq,
        colors: result.colors,
        visibleVertexCount: result.visibleVertexCount,
        inferredVertexCount: result.inferredVertexCount,
        elapsedMs: performance.now() - started,
      },
      [result.colors.buffer] as unknown as StructuredSerializeOptions,
    );
  } catch (err) {
    (self as unknown as Worker).postMessage({ type: "error", message: String(err) });
  }
};
