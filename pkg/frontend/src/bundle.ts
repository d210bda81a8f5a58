/**
 * Bundle loading: the mesh/diffuse binary, the DNET weights with their JSON
 * manifest, the reference frame, and sha256 verification of every file
 * against the bundle manifest. Failing any check aborts the load; nothing
 * partial is returned.
 */

import { Net, NetManifest, parseNet } from "./dnet.js";

export interface Mesh {
  vertexCount: number;
  faceCount: number;
  positions: Float32Array; // (V, 3)
  normals: Float32Array;   // (V, 3)
  uvs: Float32Array;       // (V, 2)
  faces: Uint32Array;      // (F, 3)
  diffuse: Float32Array;   // (V, 3)
}

export interface CameraPose {
  K: number[];
  R: number[];
  t: number[];
  width: number;
  height: number;
}

export interface BundleManifest {
  format: string;
  version: number;
  vertex_count: number;
  face_count: number;
  arch: { l1: number[]; l2: number[]; trunk: number[]; skip: number | null };
  reference_camera: string;
  files: Record<string, { bytes: number; sha256: string }>;
}

export interface Bundle {
  manifest: BundleManifest;
  mesh: Mesh;
  net: Net;
  referenceCamera: CameraPose;
  referenceColors: Float32Array | null;
}

/** Read one file of the bundle as bytes (fetch in the browser, fs in node). */
export type FileReader = (name: string) => Promise<ArrayBuffer>;

async function sha256hex(buf: ArrayBuffer): Promise<string> {
  const digest = await crypto.subtle.digest("SHA-256", buf);
  return Array.from(new Uint8Array(digest))
    .map((b) => b.toString(16).padStart(2, "0"))
    .join("");
}

const MESH_MAGIC = 0x48534d44; // "DMSH" little-endian

export function parseMeshBinary(buf: ArrayBuffer): Mesh {
  const view = new DataView(buf);
  if (view.getUint32(0, true) !== MESH_MAGIC) {
    throw new Error("bad mesh magic");
  }
  const version = view.getUint32(4, true);
  if (version !== 1) throw new Error(`unsupported mesh version ${version}`);
  const v = view.getUint32(8, true);
  const f = view.getUint32(12, true);
  let off = 16;
  const take = (count: number) => {
    const arr = new Float32Array(buf.slice(off, off + 4 * count));
    off += 4 * count;
    return arr;
  };
  const positions = take(3 * v);
  const normals = take(3 * v);
  const uvs = take(2 * v);
  const faces = new Uint32Array(buf.slice(off, off + 12 * f));
  off += 12 * f;
  if (off + 12 * v > buf.byteLength) {
    throw new Error("mesh binary is missing the per-vertex diffuse block");
  }
  const diffuse = take(3 * v);
  return { vertexCount: v, faceCount: f, positions, normals, uvs, faces, diffuse };
}

export async function loadBundle(read: FileReader): Promise<Bundle> {
  const manifestBytes = await read("manifest.json");
  const manifest: BundleManifest =
    JSON.parse(new TextDecoder().decode(manifestBytes));
  if (manifest.format !== "dslf-bundle" || manifest.version !== 1) {
    throw new Error("not a viewer bundle");
  }

  // verify every checksum before touching any payload
  const contents = new Map<string, ArrayBuffer>();
  for (const [name, info] of Object.entries(manifest.files)) {
    const bytes = await read(name);
    if (bytes.byteLength !== info.bytes) {
      throw new Error(`${name}: size ${bytes.byteLength} != ${info.bytes}`);
    }
    const digest = await sha256hex(bytes);
    if (digest !== info.sha256) {
      throw new Error(`${name}: checksum mismatch`);
    }
    contents.set(name, bytes);
  }

  const mesh = parseMeshBinary(required(contents, "mesh.bin"));
  if (mesh.vertexCount !== manifest.vertex_count ||
      mesh.faceCount !== manifest.face_count) {
    throw new Error("mesh counts disagree with the manifest");
  }
  const netManifest: NetManifest =
    JSON.parse(new TextDecoder().decode(required(contents, "net.json")));
  const net = parseNet(netManifest, required(contents, "net.dnet"));
  const referenceCamera: CameraPose =
    JSON.parse(new TextDecoder().decode(required(contents, manifest.reference_camera)));
  const refColorsBytes = contents.get("reference/vertex_colors.bin");
  const referenceColors = refColorsBytes ? new Float32Array(refColorsBytes) : null;
  return { manifest, mesh, net, referenceCamera, referenceColors };
}

function required(contents: Map<string, ArrayBuffer>, name: string): ArrayBuffer {
  const bytes = contents.get(name);
  if (!bytes) throw new Error(`bundle is missing ${name}`);
  return bytes;
}
