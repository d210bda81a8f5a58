/**
 * DNET weight parsing and the fully-connected forward pass.
 *
 * The JSON manifest carries layer dims, activations, the skip tag, and byte
 * offsets of every weight/bias block inside the .dnet file. The forward pass
 * mirrors the training pipeline exactly: input rows are
 * (2u-1, 2v-1, dx, dy, dz); columns 2..4 feed the direction stream, columns
 * 0..1 the position stream; the concatenated stream features re-enter the
 * trunk at the skip layer's input; the last layer is a sigmoid.
 */

export interface ArchSpec {
  l1: number[];
  l2: number[];
  trunk: number[];
  skip: number | null;
}

export interface LayerManifestEntry {
  in_dim: number;
  out_dim: number;
  activation: string;
  weights_offset: number;
  weights_bytes: number;
  bias_offset: number;
  bias_bytes: number;
}

export interface NetManifest {
  format: string;
  version: number;
  arch: ArchSpec;
  l1_layer_count: number;
  l2_layer_count: number;
  layers: LayerManifestEntry[];
}

export interface Layer {
  inDim: number;
  outDim: number;
  activation: "relu" | "sigmoid";
  weights: Float32Array; // row-major (inDim, outDim)
  bias: Float32Array;
}

export interface Net {
  arch: ArchSpec;
  l1Count: number;
  l2Count: number;
  layers: Layer[];
}

const KNOWN_SKIP = (skip: number | null, trunkLen: number): boolean =>
  skip === null || (Number.isInteger(skip) && skip >= 2 && skip <= trunkLen + 1);

export function parseNet(manifest: NetManifest, dnetBytes: ArrayBuffer): Net {
  if (manifest.format !== "dnet" || manifest.version !== 1) {
    throw new Error(`unsupported net manifest (${manifest.format} v${manifest.version})`);
  }
  const arch = manifest.arch;
  if (!KNOWN_SKIP(arch.skip, arch.trunk.length)) {
    throw new Error(`unsupported skip tag ${arch.skip}`);
  }
  const layers: Layer[] = [];
  for (const entry of manifest.layers) {
    if (entry.activation !== "relu" && entry.activation !== "sigmoid") {
      throw new Error(`unsupported activation ${entry.activation}`);
    }
    const wCount = entry.in_dim * entry.out_dim;
    if (entry.weights_bytes !== 4 * wCount || entry.bias_bytes !== 4 * entry.out_dim) {
      throw new Error("manifest byte counts do not match layer dims");
    }
    if (entry.weights_offset + entry.weights_bytes > dnetBytes.byteLength ||
        entry.bias_offset + entry.bias_bytes > dnetBytes.byteLength) {
      throw new Error("weight block outside the dnet payload");
    }
    layers.push({
      inDim: entry.in_dim,
      outDim: entry.out_dim,
      activation: entry.activation,
      weights: new Float32Array(dnetBytes.slice(entry.weights_offset,
                                                entry.weights_offset + entry.weights_bytes)),
      bias: new Float32Array(dnetBytes.slice(entry.bias_offset,
                                             entry.bias_offset + entry.bias_bytes)),
    });
  }
  const net: Net = {
    arch,
    l1Count: manifest.l1_layer_count,
    l2Count: manifest.l2_layer_count,
    layers,
  };
  checkDimChain(net);
  return net;
}

function checkDimChain(net: Net): void {
  const { l1Count, l2Count, layers, arch } = net;
  if (layers.length !== l1Count + l2Count + arch.trunk.length + 1) {
    throw new Error("layer count does not match the architecture");
  }
  const concat = arch.l1[arch.l1.length - 1] + arch.l2[arch.l2.length - 1];
  let prev = concat;
  for (let j = 0; j < arch.trunk.length + 1; j++) {
    const layer = layers[l1Count + l2Count + j];
    let expect = prev;
    if (arch.skip !== null && j + 1 === arch.skip) expect += concat;
    if (layer.inDim !== expect) {
      throw new Error(`trunk layer ${j + 1} input ${layer.inDim} != ${expect}`);
    }
    prev = layer.outDim;
  }
  if (layers[layers.length - 1].outDim !== 3) {
    throw new Error("output layer must be 3-wide");
  }
}

/** y = activation(x W + b) for a batch, plain JS loops over f32 weights. */
function dense(layer: Layer, x: Float64Array, count: number): Float64Array {
  const { inDim, outDim, weights, bias } = layer;
  const out = new Float64Array(count * outDim);
  for (let r = 0; r < count; r++) {
    const xo = r * inDim;
    const yo = r * outDim;
    for (let c = 0; c < outDim; c++) out[yo + c] = bias[c];
    for (let k = 0; k < inDim; k++) {
      const xv = x[xo + k];
      if (xv === 0) continue;
      const wo = k * outDim;
      for (let c = 0; c < outDim; c++) out[yo + c] += xv * weights[wo + c];
    }
  }
  if (layer.activation === "relu") {
    for (let i = 0; i < out.length; i++) if (out[i] < 0) out[i] = 0;
  } else {
    for (let i = 0; i < out.length; i++) {
      let q = 1 / (1 + Math.exp(-out[i]));
      if (q < 1e-15) q = 1e-15;
      if (q > 1 - 1e-15) q = 1 - 1e-15;
      out[i] = q;
    }
  }
  return out;
}

function slice(x: Float64Array, count: number, stride: number,
               from: number, width: number): Float64Array {
  const out = new Float64Array(count * width);
  for (let r = 0; r < count; r++) {
    for (let c = 0; c < width; c++) out[r * width + c] = x[r * stride + from + c];
  }
  return out;
}

function hconcat(a: Float64Array, wa: number, b: Float64Array, wb: number,
                 count: number): Float64Array {
  const out = new Float64Array(count * (wa + wb));
  for (let r = 0; r < count; r++) {
    out.set(a.subarray(r * wa, (r + 1) * wa), r * (wa + wb));
    out.set(b.subarray(r * wb, (r + 1) * wb), r * (wa + wb) + wa);
  }
  return out;
}

/**
 * Batched prediction: inputs (count x 5) row-major, returns (count x 3)
 * values in (0, 1). Accumulation in f64, matching the reference renderer
 * within float32 quantization.
 */
export function forward(net: Net, inputs: Float64Array, count: number): Float64Array {
  const { l1Count, l2Count, layers, arch } = net;
  let h1 = slice(inputs, count, 5, 2, 3); // direction columns
  for (let i = 0; i < l1Count; i++) h1 = dense(layers[i], h1, count);
  let h2 = slice(inputs, count, 5, 0, 2); // position columns
  for (let i = l1Count; i < l1Count + l2Count; i++) h2 = dense(layers[i], h2, count);

  const w1 = arch.l1[arch.l1.length - 1];
  const w2 = arch.l2[arch.l2.length - 1];
  const concat = hconcat(h1, w1, h2, w2, count);
  let h = concat;
  let width = w1 + w2;
  for (let j = 0; j < arch.trunk.length + 1; j++) {
    if (arch.skip !== null && j + 1 === arch.skip) {
      h = hconcat(h, width, concat, w1 + w2, count);
      width += w1 + w2;
    }
    const layer = layers[l1Count + l2Count + j];
    h = dense(layer, h, count);
    width = layer.outDim;
  }
  return h;
}
