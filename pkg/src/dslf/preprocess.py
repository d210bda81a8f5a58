"""Diffuse/specular separation, direction inversion, occlusion culling, and
packing of network-ready training tuples.

The separation is lossless by construction: the diffuse table stores the
per-channel lower median of each vertex's observations (an actually observed
value), and residual = raw - diffuse is exact in float64 for data on the
float32 grid, so diffuse + residual reproduces the raw radiance bit for bit.
"""

from __future__ import annotations

import numpy as np

from dslf import core

UNIT_TOL = 1e-6


def diffuse_component(lumisphere):
    """Per-channel lower median of one vertex's RGB observations.

    For even counts this is the lower of the two middle values, which keeps
    the diffuse color an observed value and the result deterministic.
    """
    rgb = np.asarray(lumisphere, dtype=np.float64)
    if rgb.ndim == 1:
        rgb = rgb[None, :]
    if rgb.shape[0] == 0:
        raise core.ValidationError("empty lumisphere")
    k = (rgb.shape[0] - 1) // 2
    return np.partition(rgb, k, axis=0)[k]


def to_residuals(dataset, vertex_count=None):
    """Split raw radiance into a per-vertex diffuse table plus residuals.

    Returns (residual dataset, report). Vertices with zero samples are
    skipped (diffuse 0) and listed in ``report["empty_vertices"]``. Residuals
    land in [-1, 1]; adding the diffuse back reproduces the input exactly.
    """
    if dataset.residual:
        raise core.ValidationError("dataset already holds residuals")
    n_vertices = int(vertex_count) if vertex_count is not None else (
        int(dataset.vertex_ids.max()) + 1 if dataset.sample_count else 0)

    diffuse = np.zeros((n_vertices, 3))
    order = np.argsort(dataset.vertex_ids, kind="stable")
    vids = dataset.vertex_ids[order]
    rgb = dataset.rgb[order]
    boundaries = np.flatnonzero(np.diff(vids)) + 1
    groups = np.split(np.arange(len(vids)), boundaries)
    seen = np.zeros(n_vertices, dtype=bool)
    for g in groups:
        if len(g) == 0:
            continue
        vid = int(vids[g[0]])
        diffuse[vid] = diffuse_component(rgb[g])
        seen[vid] = True

    residual = dataset.rgb - diffuse[dataset.vertex_ids]
    out = core.SlfDataset.create(
        dataset.mesh_ref, dataset.vertex_ids, dataset.directions, residual,
        direction_space=dataset.direction_space, residual=True,
        diffuse=diffuse, camera_ids=dataset.camera_ids)
    report = {"empty_vertices": np.nonzero(~seen)[0].tolist()}
    return out, report


def invert_direction(d_o, n):
    """Mirror the outgoing direction about the surface normal.

    d_tilde = 2 (n . d_o) n - d_o. Inputs must be unit within 1e-6 (they are
    renormalized internally so the output is unit within 1e-12); the map is
    an involution and preserves the angle to n.
    """
    d = np.asarray(d_o, dtype=np.float64)
    nn = np.asarray(n, dtype=np.float64)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    nn = np.atleast_2d(nn)
    dn = np.linalg.norm(d, axis=1)
    nnn = np.linalg.norm(nn, axis=1)
    if np.any(np.abs(dn - 1.0) > UNIT_TOL) or np.any(np.abs(nnn - 1.0) > UNIT_TOL):
        raise core.ValidationError("invert_direction requires unit inputs (tol 1e-6)")
    d = d / dn[:, None]
    nn = nn / nnn[:, None]
    out = 2.0 * np.einsum("ij,ij->i", nn, d)[:, None] * nn - d
    return out[0] if single else out


def cull_occluded(dataset, mesh, cameras, resolution=None):
    """Remove samples whose vertex fails the z-buffer test in their camera.

    Samples whose stored direction is not in the front hemisphere of the
    vertex normal (n . d <= 0) are removed as well; the inverse reflection is
    only defined there. Requires per-sample camera provenance.

    Returns (culled dataset, report) with removal counts per cause.
    """
    from dslf import renderer

    if dataset.camera_ids is None:
        raise core.ValidationError("cull_occluded requires per-sample camera provenance")
    if dataset.direction_space != core.RAW_SPACE:
        raise core.ValidationError("cull_occluded expects raw view directions")

    keep = np.ones(dataset.sample_count, dtype=bool)
    for ci, cam in enumerate(cameras):
        sel = dataset.camera_ids == ci
        if not np.any(sel):
            continue
        visible = renderer.vertex_visibility(mesh, cam, resolution=resolution)
        keep[sel] &= visible[dataset.vertex_ids[sel]]
    occluded = int(np.sum(~keep))

    n_dot_d = np.einsum("ij,ij->i", mesh.normals[dataset.vertex_ids], dataset.directions)
    back = keep & (n_dot_d <= 0.0)
    keep &= n_dot_d > 0.0

    out = core.SlfDataset.create(
        dataset.mesh_ref, dataset.vertex_ids[keep], dataset.directions[keep],
        dataset.rgb[keep], dataset.direction_space, dataset.residual,
        dataset.diffuse, dataset.camera_ids[keep])
    report = {
        "removed_occluded": occluded,
        "removed_backfacing": int(np.sum(back)),
        "kept": int(np.sum(keep)),
    }
    return out, report


def invert_dataset(dataset, mesh):
    """Replace every sample direction by its inverse reflection about the
    vertex normal; flips the dataset's direction-space flag."""
    if dataset.direction_space != core.RAW_SPACE:
        raise core.ValidationError("dataset directions already inverted")
    d_tilde = invert_direction(dataset.directions, mesh.normals[dataset.vertex_ids])
    return core.SlfDataset.create(
        dataset.mesh_ref, dataset.vertex_ids, d_tilde, dataset.rgb,
        core.INVERTED_SPACE, dataset.residual, dataset.diffuse, dataset.camera_ids)


def bake_diffuse_atlas(mesh, diffuse, resolution=256):
    """Rasterize the per-vertex diffuse table into the uv texture atlas.

    For display fallback only; the per-vertex f32 table remains the
    authoritative diffuse source (shared texels cannot hold two vertices).
    """
    from dslf import core as _core

    res = int(resolution)
    pixels = np.zeros((res, res, 3))
    d = np.clip(np.asarray(diffuse, dtype=np.float64), 0.0, 1.0)
    uv = mesh.uvs * res
    for tri in mesh.faces:
        p = uv[tri]
        x0 = max(int(np.floor(p[:, 0].min() - 0.5)), 0)
        x1 = min(int(np.ceil(p[:, 0].max() - 0.5)), res - 1)
        y0 = max(int(np.floor(p[:, 1].min() - 0.5)), 0)
        y1 = min(int(np.ceil(p[:, 1].max() - 0.5)), res - 1)
        if x1 < x0 or y1 < y0:
            continue
        area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) \
            - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if abs(area2) < 1e-12:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1) + 0.5,
                             np.arange(y0, y1 + 1) + 0.5)
        w0 = (p[2, 0] - p[1, 0]) * (gy - p[1, 1]) - (p[2, 1] - p[1, 1]) * (gx - p[1, 0])
        w1 = (p[0, 0] - p[2, 0]) * (gy - p[2, 1]) - (p[0, 1] - p[2, 1]) * (gx - p[2, 0])
        w2 = (p[1, 0] - p[0, 0]) * (gy - p[0, 1]) - (p[1, 1] - p[0, 1]) * (gx - p[0, 0])
        if area2 < 0:
            w0, w1, w2, a2 = -w0, -w1, -w2, -area2
        else:
            a2 = area2
        cover = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not np.any(cover):
            continue
        lam = np.stack([w0[cover], w1[cover], w2[cover]], axis=1) / a2
        ys, xs = np.nonzero(cover)
        pixels[ys + y0, xs + x0] = lam @ d[tri]
    # nearest-vertex stamp so every vertex texel holds its own diffuse
    vx = np.clip((mesh.uvs[:, 0] * res).astype(int), 0, res - 1)
    vy = np.clip((mesh.uvs[:, 1] * res).astype(int), 0, res - 1)
    pixels[vy, vx] = d
    return _core.Image(pixels)


# ---------------------------------------------------------------------------
# network input/target encoding


def encode_inputs(uvs, directions):
    """Pack (u, v) and inverted directions into network input rows
    (2u-1, 2v-1, dx, dy, dz); uv is affinely mapped onto [-1, 1]."""
    uvs = np.asarray(uvs, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    return np.concatenate([2.0 * uvs - 1.0, directions], axis=1)


def encode_targets(residuals):
    """Map residuals in [-1, 1] onto the sigmoid range via (r + 1) / 2."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.size and (r.min() < -1.0 - 1e-12 or r.max() > 1.0 + 1e-12):
        raise core.ValidationError("residual outside [-1, 1]")
    return (r + 1.0) / 2.0


def decode_targets(q):
    """Inverse of encode_targets: residual = 2 q - 1."""
    return 2.0 * np.asarray(q, dtype=np.float64) - 1.0


def decode_inputs(x):
    """Inverse of encode_inputs; returns (uvs, directions)."""
    x = np.asarray(x, dtype=np.float64)
    return (x[:, :2] + 1.0) / 2.0, x[:, 2:]


def encode_training_tuples(dataset, mesh):
    """Turn a residual, inverted-direction dataset into (inputs, targets).

    inputs: (N, 5) rows (2u-1, 2v-1, dx, dy, dz); targets: (N, 3) in [0, 1].
    """
    if not dataset.residual:
        raise core.ValidationError("encode_training_tuples expects residuals")
    if dataset.direction_space != core.INVERTED_SPACE:
        raise core.ValidationError("encode_training_tuples expects inverted directions")
    uvs = mesh.uvs[dataset.vertex_ids]
    inputs = encode_inputs(uvs, dataset.directions)
    targets = encode_targets(dataset.rgb)
    return inputs, targets
