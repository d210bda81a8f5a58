/**
 * Inference parity against the exporter: on the bundled reference camera,
 * the viewer's per-vertex colors must stay within 1/255 per channel of the
 * colors the exporting renderer produced. Also covers the load-failure
 * contracts (checksum mismatch, unsupported skip tag).
 */

import assert from "node:assert/strict";
import { readFile } from "node:fs/promises";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import test from "node:test";

import { loadBundle, FileReader } from "../src/bundle.js";
import { vertexColors } from "../src/inference.js";

const FIXTURE = join(dirname(fileURLToPath(import.meta.url)),
                     "..", "..", "test", "fixtures", "bundle");

function fsReader(root: string): FileReader {
  return async (name) => {
    const buf = await readFile(join(root, name));
    return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
  };
}

test("reference-frame per-vertex colors within 1/255 of the export", async () => {
  const bundle = await loadBundle(fsReader(FIXTURE));
  assert.ok(bundle.referenceColors, "fixture bundle lacks reference colors");
  const result = vertexColors(bundle.mesh, bundle.net, bundle.referenceCamera);
  const expect = bundle.referenceColors!;
  assert.equal(result.colors.length, expect.length);
  let worst = 0;
  for (let i = 0; i < expect.length; i++) {
    worst = Math.max(worst, Math.abs(result.colors[i] - expect[i]));
  }
  assert.ok(worst <= 1 / 255,
            `max channel deviation ${worst} exceeds 1/255`);
  assert.ok(result.inferredVertexCount > 0);
});

test("zero-weight net decodes to pure diffuse", async () => {
  const bundle = await loadBundle(fsReader(FIXTURE));
  for (const layer of bundle.net.layers) {
    layer.weights.fill(0);
    layer.bias.fill(0);
  }
  const result = vertexColors(bundle.mesh, bundle.net, bundle.referenceCamera);
  const { diffuse } = bundle.mesh;
  for (let i = 0; i < result.colors.length; i++) {
    const want = Math.min(1, Math.max(0, diffuse[i]));
    assert.ok(Math.abs(result.colors[i] - want) <= 1e-6,
              `vertex channel ${i}: ${result.colors[i]} != ${want}`);
  }
});

test("grazing vertices are excluded from inference and keep diffuse", async () => {
  const bundle = await loadBundle(fsReader(FIXTURE));
  const result = vertexColors(bundle.mesh, bundle.net, bundle.referenceCamera);
  assert.ok(result.inferredVertexCount <= result.visibleVertexCount);
  assert.ok(result.visibleVertexCount < bundle.mesh.vertexCount);
});

test("corrupted weight file fails the load, nothing partial", async () => {
  const base = fsReader(FIXTURE);
  const read: FileReader = async (name) => {
    const buf = await base(name);
    if (name === "net.dnet") new Uint8Array(buf)[64] ^= 0xff;
    return buf;
  };
  await assert.rejects(loadBundle(read), /checksum mismatch/);
});

test("unknown skip tag is an explicit unsupported-arch error", async () => {
  const base = fsReader(FIXTURE);
  const read: FileReader = async (name) => {
    const buf = await base(name);
    if (name !== "net.json") return buf;
    const doc = JSON.parse(new TextDecoder().decode(buf));
    doc.arch.skip = 99;
    return new TextEncoder().encode(JSON.stringify(doc)).buffer as ArrayBuffer;
  };
  // checksum of the tampered manifest no longer matches; bypass the digest
  // by loading the manifest straight into parseNet instead
  const { parseNet } = await import("../src/dnet.js");
  const netManifest = JSON.parse(new TextDecoder().decode(await read("net.json")));
  const dnet = await base("net.dnet");
  assert.throws(() => parseNet(netManifest, dnet), /unsupported skip/);
});

test("truncated mesh binary is rejected", async () => {
  const { parseMeshBinary } = await import("../src/bundle.js");
  const whole = await fsReader(FIXTURE)("mesh.bin");
  assert.throws(() => parseMeshBinary(whole.slice(0, whole.byteLength - 100)),
                /diffuse block|mesh/);
});
