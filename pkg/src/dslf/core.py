"""Domain types, invariant validation, and file I/O shared by the pipeline.

Conventions used throughout the package:

- positions and translations are in scene units, directions are unit 3-vectors,
  texture coordinates live in [0, 1]^2,
- cameras store world-to-camera rotation/translation and a pixel intrinsic
  matrix ``K`` with ``K[2, 2] == 1``,
- sample radiance is RGB in [0, 1] for raw data and [-1, 1] for residuals.

All float payload that ends up on disk is stored at single precision. In
memory the arrays are float64, but constructors snap values to the float32
grid so that serialization is lossless and round trips are bit exact.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

log = logging.getLogger(__name__)

DATASET_MAGIC = b"DSLF"
DATASET_VERSION = 1

UNIT_TOL_NORMALS = 1e-6
UNIT_TOL_STRICT = 1e-9


class FormatError(ValueError):
    """Malformed or truncated input file."""


class ValidationError(ValueError):
    """A domain invariant does not hold."""


# ---------------------------------------------------------------------------
# small vector helpers


def normalize(v, tol=1e-30):
    """Return ``v`` scaled to unit Euclidean norm (last axis).

    Raises ``ValidationError`` on (near-)zero vectors rather than returning
    NaNs. The result has norm within 1e-9 of 1.
    """
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < tol):
        raise ValidationError("cannot normalize zero-length vector")
    return v / n


def is_unit(v, tol):
    v = np.asarray(v, dtype=np.float64)
    return np.all(np.abs(np.linalg.norm(v, axis=-1) - 1.0) <= tol)


def f32grid(a):
    """Snap values to the float32 grid while keeping float64 dtype."""
    return np.ascontiguousarray(np.asarray(a, dtype=np.float32).astype(np.float64))


def _frozen(a):
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Mesh


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh with per-vertex unit normals and uv coordinates.

    Immutable after construction; safe for concurrent readers.
    """

    positions: np.ndarray  # (V, 3) float64
    normals: np.ndarray    # (V, 3) float64, unit within 1e-6
    uvs: np.ndarray        # (V, 2) float64 in [0, 1]^2
    faces: np.ndarray      # (F, 3) int32

    @staticmethod
    def create(positions, normals, uvs, faces):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        normals = np.ascontiguousarray(normals, dtype=np.float64)
        uvs = np.ascontiguousarray(uvs, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int32)
        mesh = Mesh(_frozen(positions), _frozen(normals), _frozen(uvs), _frozen(faces))
        mesh._check()
        return mesh

    @property
    def vertex_count(self):
        return self.positions.shape[0]

    @property
    def face_count(self):
        return self.faces.shape[0]

    def _check(self):
        v = self.positions.shape[0]
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValidationError("positions must be (V, 3)")
        if self.normals.shape != (v, 3):
            raise ValidationError("normals length must equal positions length")
        if self.uvs.shape != (v, 2):
            raise ValidationError("uvs length must equal positions length")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError("faces must be (F, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            raise ValidationError("face index out of range")
        if np.any(self.uvs < -1e-12) or np.any(self.uvs > 1.0 + 1e-12):
            raise ValidationError("uv coordinates must lie in [0, 1]^2")
        if not is_unit(self.normals, UNIT_TOL_NORMALS):
            raise ValidationError("vertex normals must be unit length within 1e-6")
        if self.faces.size:
            areas = face_areas(self.positions, self.faces)
            scale = float(np.max(np.ptp(self.positions, axis=0))) or 1.0
            bad = np.nonzero(areas <= 1e-12 * scale * scale)[0]
            if bad.size:
                raise ValidationError(f"degenerate (zero area) faces: {bad[:8].tolist()}")

    def face_normals(self):
        """Geometric (not vertex) unit normals, one per face."""
        p = self.positions
        f = self.faces
        n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def face_centroids(self):
        p = self.positions
        return p[self.faces].mean(axis=1)


def face_areas(positions, faces):
    e1 = positions[faces[:, 1]] - positions[faces[:, 0]]
    e2 = positions[faces[:, 2]] - positions[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def load_mesh(path):
    """Parse the OBJ subset (v / vn / vt / f, triangles only) into a Mesh.

    Faces must reference uv coordinates (``v/vt`` or ``v/vt/vn``). Missing
    normals are computed as area-weighted averages of face normals; normals
    present in the file are renormalized (logged when they were off).
    """
    raw_v, raw_vt, raw_vn = [], [], []
    corners = []  # (vi, ti, ni or -1) per face corner
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            tag = parts[0]
            try:
                if tag == "v":
                    raw_v.append([float(x) for x in parts[1:4]])
                    if len(parts) != 4:
                        raise ValueError("expected 3 coordinates")
                elif tag == "vt":
                    if len(parts) < 3:
                        raise ValueError("expected 2 coordinates")
                    raw_vt.append([float(parts[1]), float(parts[2])])
                elif tag == "vn":
                    if len(parts) != 4:
                        raise ValueError("expected 3 coordinates")
                    raw_vn.append([float(x) for x in parts[1:4]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise ValueError("faces must be triangles")
                    tri = []
                    for corner in parts[1:]:
                        idx = corner.split("/")
                        if len(idx) < 2 or idx[1] == "":
                            raise ValueError("face corner is missing a uv index")
                        vi = int(idx[0])
                        ti = int(idx[1])
                        ni = int(idx[2]) if len(idx) > 2 and idx[2] != "" else 0
                        if vi <= 0 or ti <= 0 or ni < 0:
                            raise ValueError("OBJ indices are 1-based and positive")
                        tri.append((vi, ti, ni))
                    corners.append(tri)
                # other tags ignored (no materials in this subset)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc

    if not raw_v or not corners:
        raise FormatError(f"{path}: no geometry found")

    raw_v = np.asarray(raw_v, dtype=np.float64)
    raw_vt = np.asarray(raw_vt, dtype=np.float64) if raw_vt else np.zeros((0, 2))
    raw_vn = np.asarray(raw_vn, dtype=np.float64) if raw_vn else np.zeros((0, 3))

    # Split OBJ corner triples into unique package vertices.
    remap = {}
    positions, uvs, normal_ids = [], [], []
    faces = []
    for tri in corners:
        out = []
        for vi, ti, ni in tri:
            if vi > len(raw_v) or ti > len(raw_vt) or ni > len(raw_vn):
                raise FormatError(f"{path}: face index out of range (v{vi}/vt{ti}/vn{ni})")
            key = (vi, ti, ni)
            if key not in remap:
                remap[key] = len(positions)
                positions.append(raw_v[vi - 1])
                uvs.append(raw_vt[ti - 1])
                normal_ids.append(ni - 1)
            out.append(remap[key])
        faces.append(out)

    positions = np.asarray(positions, dtype=np.float64)
    uvs = np.asarray(uvs, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int32)

    have_all_normals = all(ni >= 0 for ni in normal_ids)
    if have_all_normals:
        normals = raw_vn[np.asarray(normal_ids)]
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms < 1e-12):
            raise FormatError(f"{path}: zero-length vertex normal")
        if np.any(np.abs(norms - 1.0) > UNIT_TOL_NORMALS):
            log.warning("renormalizing %d non-unit normals from %s",
                        int(np.sum(np.abs(norms - 1.0) > UNIT_TOL_NORMALS)), path)
        normals = normals / norms[:, None]
    else:
        normals = vertex_normals_from_faces(positions, faces)

    return Mesh.create(positions, normals, uvs, faces)


def vertex_normals_from_faces(positions, faces):
    """Area-weighted face-normal average per vertex (unnormalized cross
    products already carry the area weight)."""
    acc = np.zeros_like(positions)
    fn = np.cross(positions[faces[:, 1]] - positions[faces[:, 0]],
                  positions[faces[:, 2]] - positions[faces[:, 0]])
    for c in range(3):
        np.add.at(acc, faces[:, c], fn)
    norms = np.linalg.norm(acc, axis=1)
    if np.any(norms < 1e-15):
        raise ValidationError("isolated vertex or cancelling face normals")
    return acc / norms[:, None]


def save_mesh(mesh, path):
    """Write a Mesh back out as OBJ (one vt/vn per vertex, 1-based faces)."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in mesh.positions:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.uvs:
            fh.write(f"vt {t[0]:.17g} {t[1]:.17g}\n")
        for n in mesh.normals:
            fh.write(f"vn {n[0]:.17g} {n[1]:.17g} {n[2]:.17g}\n")
        for f in mesh.faces:
            a, b, c = (int(i) + 1 for i in f)
            fh.write(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}\n")


# ---------------------------------------------------------------------------
# Cameras


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: intrinsics ``K`` (pixels) plus world-to-camera ``R, t``."""

    K: np.ndarray          # (3, 3) upper triangular, K[2,2] == 1
    R: np.ndarray          # (3, 3) rotation, world -> camera
    t: np.ndarray          # (3,) translation, world -> camera
    width: int
    height: int

    @staticmethod
    def create(K, R, t, width, height):
        K = _frozen(np.ascontiguousarray(K, dtype=np.float64))
        R = _frozen(np.ascontiguousarray(R, dtype=np.float64))
        t = _frozen(np.ascontiguousarray(t, dtype=np.float64).reshape(3))
        cam = CameraPose(K, R, t, int(width), int(height))
        cam._check()
        return cam

    def _check(self):
        if self.K.shape != (3, 3) or self.R.shape != (3, 3):
            raise ValidationError("K and R must be 3x3")
        if abs(self.K[2, 2] - 1.0) > 1e-12:
            raise ValidationError("K[2][2] must be 1")
        low = np.abs(np.tril(self.K, -1))
        if np.max(low) > 1e-9 * max(1.0, np.max(np.abs(self.K))):
            raise ValidationError("K must be upper triangular")
        if np.max(np.abs(self.R.T @ self.R - np.eye(3))) > UNIT_TOL_STRICT:
            raise ValidationError("R must be orthonormal within 1e-9")
        if abs(np.linalg.det(self.R) - 1.0) > UNIT_TOL_STRICT:
            raise ValidationError("det(R) must be +1 within 1e-9")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("resolution must be positive")

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def to_dict(self):
        return {
            "K": [float(x) for x in self.K.reshape(-1)],
            "R": [float(x) for x in self.R.reshape(-1)],
            "t": [float(x) for x in self.t],
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d):
        try:
            K = np.asarray(d["K"], dtype=np.float64).reshape(3, 3)
            R = np.asarray(d["R"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(d["t"], dtype=np.float64)
            return CameraPose.create(K, R, t, d["width"], d["height"])
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad camera document: {exc}") from exc


def save_camera(camera, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(camera.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_camera(path):
    with open(path, "r", encoding="utf-8") as fh:
        return CameraPose.from_dict(json.load(fh))


def look_at_pose(eye, target, up, K, width, height):
    """World-to-camera pose for a camera at ``eye`` looking at ``target``.

    Camera frame: +z forward (into the scene), +x right, +y down, matching
    the pixel convention of ``K``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = normalize(np.asarray(target, dtype=np.float64) - eye)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    if np.linalg.norm(right) < 1e-12:
        raise ValidationError("up vector parallel to view direction")
    right = normalize(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ eye
    return CameraPose.create(K, R, t, width, height)


def simple_intrinsics(width, height, fov_deg=45.0):
    f = 0.5 * width / np.tan(np.deg2rad(fov_deg) / 2.0)
    return np.array([[f, 0.0, width / 2.0],
                     [0.0, f, height / 2.0],
                     [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# Ray sample sets


RAW_SPACE = "raw"
INVERTED_SPACE = "inverted"


@dataclass(frozen=True)
class SlfDataset:
    """Per-vertex directional radiance observations tied to a mesh.

    ``directions`` stores either the raw outgoing direction toward the camera
    or the normal-inverted direction; ``direction_space`` records which.
    ``rgb`` holds raw radiance in [0, 1] or, when ``residual`` is set, the
    specular residual in [-1, 1] paired with the per-vertex ``diffuse`` table.
    ``camera_ids`` is source-camera provenance when known.
    """

    mesh_ref: str
    vertex_ids: np.ndarray          # (N,) uint32
    directions: np.ndarray          # (N, 3) float64 on the f32 grid
    rgb: np.ndarray                 # (N, 3) float64 on the f32 grid
    direction_space: str = RAW_SPACE
    residual: bool = False
    diffuse: np.ndarray | None = None      # (V, 3) float64 on the f32 grid
    camera_ids: np.ndarray | None = None   # (N,) uint32

    @staticmethod
    def create(mesh_ref, vertex_ids, directions, rgb, direction_space=RAW_SPACE,
               residual=False, diffuse=None, camera_ids=None):
        vertex_ids = _frozen(np.ascontiguousarray(vertex_ids, dtype=np.uint32))
        directions = _frozen(f32grid(directions))
        # rgb keeps full float64 precision: residuals are exact differences of
        # f32-grid values and are generally not f32-representable themselves.
        rgb = _frozen(np.ascontiguousarray(rgb, dtype=np.float64))
        diffuse = None if diffuse is None else _frozen(f32grid(diffuse))
        camera_ids = None if camera_ids is None else _frozen(
            np.ascontiguousarray(camera_ids, dtype=np.uint32))
        ds = SlfDataset(str(mesh_ref), vertex_ids, directions, rgb,
                        direction_space, bool(residual), diffuse, camera_ids)
        ds._check_shapes()
        return ds

    @property
    def sample_count(self):
        return self.vertex_ids.shape[0]

    def _check_shapes(self):
        n = self.vertex_ids.shape[0]
        if self.directions.shape != (n, 3) or self.rgb.shape != (n, 3):
            raise ValidationError("directions/rgb must be (N, 3)")
        if self.direction_space not in (RAW_SPACE, INVERTED_SPACE):
            raise ValidationError(f"unknown direction space {self.direction_space!r}")
        if self.camera_ids is not None and self.camera_ids.shape != (n,):
            raise ValidationError("camera_ids must be (N,)")
        if self.diffuse is not None and (self.diffuse.ndim != 2 or self.diffuse.shape[1] != 3):
            raise ValidationError("diffuse table must be (V, 3)")
        if self.residual and self.diffuse is None:
            raise ValidationError("residual dataset requires a diffuse table")


def validate(dataset, mesh):
    """Collect every violated dataset invariant against ``mesh``.

    Returns a list of human-readable violation strings (empty iff valid).
    Reporting only; never raises on invalid data.
    """
    report = []
    v = mesh.vertex_count
    bad = np.nonzero(dataset.vertex_ids >= v)[0]
    for i in bad[:64]:
        report.append(f"sample {i}: vertex_id {int(dataset.vertex_ids[i])} out of range (V={v})")
    if bad.size > 64:
        report.append(f"... {bad.size - 64} more out-of-range vertex ids")

    norms = np.linalg.norm(dataset.directions, axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > UNIT_TOL_NORMALS)[0]
    for i in bad[:64]:
        report.append(f"sample {i}: direction norm {norms[i]:.9f} not unit within 1e-6")
    if bad.size > 64:
        report.append(f"... {bad.size - 64} more non-unit directions")

    lo, hi = (-1.0, 1.0) if dataset.residual else (0.0, 1.0)
    bad = np.nonzero(np.any((dataset.rgb < lo - 1e-12) | (dataset.rgb > hi + 1e-12), axis=1))[0]
    for i in bad[:64]:
        report.append(f"sample {i}: rgb outside [{lo}, {hi}]")
    if bad.size > 64:
        report.append(f"... {bad.size - 64} more rgb range violations")

    if dataset.residual:
        if dataset.diffuse is None:
            report.append("residual dataset is missing the diffuse table")
        elif dataset.diffuse.shape[0] != v:
            report.append(f"diffuse table has {dataset.diffuse.shape[0]} rows, mesh has {v} vertices")
        elif np.any(dataset.diffuse < -1e-12) or np.any(dataset.diffuse > 1.0 + 1e-12):
            report.append("diffuse table values outside [0, 1]")
    return report


_FLAG_INVERTED = 1
_FLAG_RESIDUAL = 2
_FLAG_DIFFUSE = 4
_FLAG_CAMERAS = 8
_FLAG_WIDE_RGB = 16


def save_dataset(dataset, path):
    """Serialize to the little-endian binary dataset format.

    Layout: magic "DSLF", version u32, flags u32, mesh-ref string (u32 length
    + utf-8), sample count u64, diffuse row count u64, then packed arrays
    (vertex ids u32, camera ids u32, directions f32, rgb, diffuse f32). The
    rgb payload is f32 when every value sits on the f32 grid (raw captures)
    and f64 otherwise (flag bit): residuals are exact differences of f32
    values, and rounding them would break the lossless-separation contract.
    Deterministic: the same dataset always produces the same bytes.
    """
    flags = 0
    if dataset.direction_space == INVERTED_SPACE:
        flags |= _FLAG_INVERTED
    if dataset.residual:
        flags |= _FLAG_RESIDUAL
    if dataset.diffuse is not None:
        flags |= _FLAG_DIFFUSE
    if dataset.camera_ids is not None:
        flags |= _FLAG_CAMERAS
    wide = not np.array_equal(f32grid(dataset.rgb), dataset.rgb)
    if wide:
        flags |= _FLAG_WIDE_RGB
    ref = dataset.mesh_ref.encode("utf-8")
    n = dataset.sample_count
    d = 0 if dataset.diffuse is None else dataset.diffuse.shape[0]
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", DATASET_VERSION, flags, len(ref)))
        fh.write(ref)
        fh.write(struct.pack("<QQ", n, d))
        fh.write(dataset.vertex_ids.astype("<u4").tobytes())
        if dataset.camera_ids is not None:
            fh.write(dataset.camera_ids.astype("<u4").tobytes())
        fh.write(dataset.directions.astype("<f4").tobytes())
        fh.write(dataset.rgb.astype("<f8" if wide else "<f4").tobytes())
        if dataset.diffuse is not None:
            fh.write(dataset.diffuse.astype("<f4").tobytes())


def load_dataset(path):
    """Read a dataset file; rejects bad magic, version, truncation, and
    invariant-violating payload (unit directions, rgb ranges, flags)."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(fmt, off):
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise FormatError(f"{path}: truncated header")
        return struct.unpack_from(fmt, blob, off), off + size

    if blob[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version, flags, ref_len), off = take("<III", 4)
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if off + ref_len > len(blob):
        raise FormatError(f"{path}: truncated mesh reference")
    mesh_ref = blob[off:off + ref_len].decode("utf-8")
    off += ref_len
    (n, d), off = take("<QQ", off)

    def array(dtype, count, off):
        nbytes = np.dtype(dtype).itemsize * count
        if off + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        return arr, off + nbytes

    vertex_ids, off = array("<u4", n, off)
    camera_ids = None
    if flags & _FLAG_CAMERAS:
        camera_ids, off = array("<u4", n, off)
    directions, off = array("<f4", 3 * n, off)
    rgb, off = array("<f8" if flags & _FLAG_WIDE_RGB else "<f4", 3 * n, off)
    diffuse = None
    if flags & _FLAG_DIFFUSE:
        diffuse, off = array("<f4", 3 * d, off)
        diffuse = diffuse.reshape(d, 3)
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")

    residual = bool(flags & _FLAG_RESIDUAL)
    if residual and diffuse is None:
        raise FormatError(f"{path}: residual flag set but no diffuse table")
    ds = SlfDataset.create(
        mesh_ref, vertex_ids, directions.reshape(n, 3), rgb.reshape(n, 3),
        INVERTED_SPACE if flags & _FLAG_INVERTED else RAW_SPACE,
        residual, diffuse, camera_ids)

    norms = np.linalg.norm(ds.directions, axis=1)
    if n and np.max(np.abs(norms - 1.0)) > UNIT_TOL_NORMALS:
        raise FormatError(f"{path}: non-unit direction in payload")
    lo, hi = (-1.0, 1.0) if residual else (0.0, 1.0)
    if n and (ds.rgb.min() < lo - 1e-12 or ds.rgb.max() > hi + 1e-12):
        raise FormatError(f"{path}: rgb outside [{lo}, {hi}]")
    return ds


# ---------------------------------------------------------------------------
# Images


@dataclass
class Image:
    """Row-major RGB raster in [0, 1] with an optional coverage mask."""

    pixels: np.ndarray            # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray | None = None  # (H, W) bool

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValidationError("pixels must be (H, W, 3)")
        if self.mask is not None:
            self.mask = np.ascontiguousarray(self.mask, dtype=bool)
            if self.mask.shape != self.pixels.shape[:2]:
                raise ValidationError("mask shape must match pixels")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def to_u8(self):
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)

    def save_png(self, path):
        PILImage.fromarray(self.to_u8(), mode="RGB").save(path)

    @staticmethod
    def load_png(path):
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return Image(arr)


DEPTH_SENTINEL = np.inf


@dataclass
class DepthMap:
    """Camera-space depth per pixel; uncovered pixels hold the +inf sentinel."""

    data: np.ndarray  # (H, W) float64

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValidationError("depth must be (H, W)")

    @property
    def coverage(self):
        return np.isfinite(self.data)

    def save(self, path):
        """32-bit float little-endian binary with a small header."""
        h, w = self.data.shape
        with open(path, "wb") as fh:
            fh.write(b"DPTH")
            fh.write(struct.pack("<II", w, h))
            fh.write(self.data.astype("<f4").tobytes())

    @staticmethod
    def load(path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != b"DPTH":
            raise FormatError(f"{path}: bad depth magic")
        w, h = struct.unpack_from("<II", blob, 4)
        data = np.frombuffer(blob, dtype="<f4", count=w * h, offset=12)
        return DepthMap(data.reshape(h, w).astype(np.float64))

    def save_preview_png(self, path):
        """8-bit normalized preview (near = bright, background = black)."""
        cov = self.coverage
        img = np.zeros(self.data.shape)
        if np.any(cov):
            d = self.data[cov]
            lo, hi = float(d.min()), float(d.max())
            span = (hi - lo) or 1.0
            img[cov] = 1.0 - (self.data[cov] - lo) / span
        rgb = np.repeat(img[:, :, None], 3, axis=2)
        Image(rgb).save_png(path)
