"""CPU rasterizer and the per-vertex inference render path.

One frame is produced by: back-face culling, per-vertex view directions and
their normal-inverted counterparts, one batched network forward pass over all
visible vertices, then z-buffered rasterization of the per-vertex colors with
perspective-correct interpolation.

The rasterizer covers a pixel when the pixel center (x + 0.5, y + 0.5) lies
inside the projected triangle. Depth ties keep the lower face id (faces are
processed in id order with a strict less-than depth test), so output is
independent of any parallel tiling schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dslf import core
from dslf.preprocess import decode_targets, encode_inputs, invert_direction

NEAR_PLANE = 1e-3


def camera_space(positions, camera):
    return positions @ camera.R.T + camera.t


def project_points(positions, camera):
    """Project world points; returns (screen xy, camera-space z)."""
    p = camera_space(positions, camera)
    h = p @ camera.K.T
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = h[:, :2] / z[:, None]
    return xy, z


def backface_cull(mesh, camera):
    """Keep faces whose geometric normal points toward the camera center.

    Returns (visible vertex ids, visible face ids), both sorted ascending.
    A face is kept iff normal . (center - centroid) > 0 strictly.
    """
    n = mesh.face_normals()
    c = mesh.face_centroids()
    keep = np.einsum("ij,ij->i", n, camera.center[None, :] - c) > 0.0
    face_ids = np.nonzero(keep)[0].astype(np.int32)
    vert_ids = np.unique(mesh.faces[face_ids])
    return vert_ids, face_ids


def vertex_view_directions(mesh, vertex_ids, camera):
    """Per-vertex unit directions toward the camera and their inversions.

    Returns (kept vertex ids, d, d_tilde, dropped vertex ids); vertices whose
    interpolated normal satisfies n . d <= 0 cannot be inverted and are
    dropped from inference.
    """
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
    d = camera.center[None, :] - mesh.positions[vertex_ids]
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    n = mesh.normals[vertex_ids]
    front = np.einsum("ij,ij->i", n, d) > 0.0
    kept = vertex_ids[front]
    d = d[front]
    d_tilde = invert_direction(d, mesh.normals[kept])
    return kept, d, d_tilde, vertex_ids[~front]


# ---------------------------------------------------------------------------
# rasterization core


@dataclass
class RasterResult:
    depth: np.ndarray        # (H, W) float64, +inf background
    face_id: np.ndarray      # (H, W) int32, -1 background
    attrs: dict              # name -> (H, W, C) float64

    @property
    def mask(self):
        return self.face_id >= 0


def _clip_near(pts_cam, attr_rows, near):
    """Sutherland-Hodgman clip of one camera-space triangle against z=near.

    Attributes are interpolated linearly in camera space (affine before
    projection). Returns a polygon as (pts, attrs) arrays, possibly empty.
    """
    out_p, out_a = [], []
    k = len(pts_cam)
    for i in range(k):
        a, b = pts_cam[i], pts_cam[(i + 1) % k]
        aa, ab = attr_rows[i], attr_rows[(i + 1) % k]
        a_in, b_in = a[2] > near, b[2] > near
        if a_in:
            out_p.append(a)
            out_a.append(aa)
        if a_in != b_in:
            t = (near - a[2]) / (b[2] - a[2])
            out_p.append(a + t * (b - a))
            out_a.append(aa + t * (ab - aa))
    return out_p, out_a


def rasterize(positions, faces, camera, attrs=None, face_ids=None,
              resolution=None, near=NEAR_PLANE):
    """Z-buffered rasterization with perspective-correct interpolation.

    positions: (V, 3) world coordinates; faces: (F, 3) indices into them;
    attrs: dict of per-vertex (V, C) arrays to interpolate; face_ids: original
    ids recorded in the id buffer (defaults to 0..F-1). Faces crossing the
    near plane are clipped, not dropped.
    """
    attrs = attrs or {}
    width, height = resolution or (camera.width, camera.height)
    faces = np.asarray(faces, dtype=np.int64)
    if face_ids is None:
        face_ids = np.arange(len(faces), dtype=np.int32)

    names = list(attrs)
    sizes = [np.asarray(attrs[n]).shape[1] for n in names]
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    total_c = int(starts[-1])
    packed = (np.concatenate([np.asarray(attrs[n], dtype=np.float64) for n in names], axis=1)
              if names else np.zeros((len(positions), 0)))

    depth = np.full((height, width), np.inf)
    idbuf = np.full((height, width), -1, dtype=np.int32)
    attrbuf = np.zeros((height, width, total_c))

    cam_pts = camera_space(np.asarray(positions, dtype=np.float64), camera)
    K = camera.K

    for fi, tri in zip(face_ids, faces):
        pts = cam_pts[tri]
        rows = packed[tri]
        if np.all(pts[:, 2] <= near):
            continue
        if np.any(pts[:, 2] <= near):
            poly_p, poly_a = _clip_near(list(pts), list(rows), near)
            if len(poly_p) < 3:
                continue
            subtris = [(poly_p[0], poly_p[i], poly_p[i + 1],
                        poly_a[0], poly_a[i], poly_a[i + 1])
                       for i in range(1, len(poly_p) - 1)]
        else:
            subtris = [(pts[0], pts[1], pts[2], rows[0], rows[1], rows[2])]

        for p0, p1, p2, a0, a1, a2 in subtris:
            tri_p = np.stack([p0, p1, p2])
            z = tri_p[:, 2]
            h = tri_p @ K.T
            sx = h[:, 0] / z
            sy = h[:, 1] / z

            x0 = max(int(np.floor(sx.min() - 0.5)), 0)
            x1 = min(int(np.ceil(sx.max() - 0.5)), width - 1)
            y0 = max(int(np.floor(sy.min() - 0.5)), 0)
            y1 = min(int(np.ceil(sy.max() - 0.5)), height - 1)
            if x1 < x0 or y1 < y0:
                continue

            area2 = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0])
            if abs(area2) < 1e-14:
                continue

            px = np.arange(x0, x1 + 1) + 0.5
            py = np.arange(y0, y1 + 1) + 0.5
            gx, gy = np.meshgrid(px, py)

            w0 = (sx[2] - sx[1]) * (gy - sy[1]) - (sy[2] - sy[1]) * (gx - sx[1])
            w1 = (sx[0] - sx[2]) * (gy - sy[2]) - (sy[0] - sy[2]) * (gx - sx[2])
            w2 = (sx[1] - sx[0]) * (gy - sy[0]) - (sy[1] - sy[0]) * (gx - sx[0])
            if area2 < 0:
                w0, w1, w2, a2s = -w0, -w1, -w2, -area2
            else:
                a2s = area2
            cover = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
            if not np.any(cover):
                continue

            l0 = w0[cover] / a2s
            l1 = w1[cover] / a2s
            l2 = w2[cover] / a2s
            inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2]
            zpix = 1.0 / inv_z

            yy, xx = np.nonzero(cover)
            yy = yy + y0
            xx = xx + x0
            closer = zpix < depth[yy, xx]
            if not np.any(closer):
                continue
            yy, xx, zpix = yy[closer], xx[closer], zpix[closer]
            depth[yy, xx] = zpix
            idbuf[yy, xx] = fi
            if total_c:
                lam = np.stack([l0[closer] / z[0], l1[closer] / z[1],
                                l2[closer] / z[2]], axis=1)
                lam /= lam.sum(axis=1, keepdims=True)
                attrbuf[yy, xx, :] = lam @ np.stack([a0, a1, a2])

    out_attrs = {n: attrbuf[:, :, starts[i]:starts[i + 1]]
                 for i, n in enumerate(names)}
    return RasterResult(depth, idbuf, out_attrs)


# ---------------------------------------------------------------------------
# renderer entry points


def render_depth(mesh, camera, resolution=None, cull=True):
    """Camera-space depth of the nearest surface; background pixels hold the
    +inf sentinel. Uses the same z-buffer as the color path."""
    if cull:
        _, face_ids = backface_cull(mesh, camera)
    else:
        face_ids = np.arange(mesh.face_count, dtype=np.int32)
    res = rasterize(mesh.positions, mesh.faces[face_ids], camera,
                    face_ids=face_ids, resolution=resolution)
    return core.DepthMap(res.depth)


def render_vertex_colors(mesh, colors, camera, resolution=None, cull=True):
    """Rasterize per-vertex RGB with the z-buffer; returns a masked Image."""
    if cull:
        _, face_ids = backface_cull(mesh, camera)
    else:
        face_ids = np.arange(mesh.face_count, dtype=np.int32)
    res = rasterize(mesh.positions, mesh.faces[face_ids], camera,
                    attrs={"rgb": np.clip(colors, 0.0, 1.0)},
                    face_ids=face_ids, resolution=resolution)
    pixels = np.clip(res.attrs["rgb"], 0.0, 1.0)
    return core.Image(pixels, mask=res.mask)


def render_gbuffer(mesh, camera, resolution=None, cull=True):
    """Interpolated uv / normal / world position buffers plus ids and depth."""
    if cull:
        _, face_ids = backface_cull(mesh, camera)
    else:
        face_ids = np.arange(mesh.face_count, dtype=np.int32)
    return rasterize(
        mesh.positions, mesh.faces[face_ids], camera,
        attrs={"uv": mesh.uvs, "normal": mesh.normals, "pos": mesh.positions},
        face_ids=face_ids, resolution=resolution)


def dslf_vertex_colors(mesh, net, diffuse, camera):
    """Per-vertex colors for one viewpoint: diffuse plus predicted residual.

    Vertices outside the inference set (back-facing, or n . d <= 0) fall back
    to their diffuse color. Inference runs as one batched forward pass.
    """
    from dslf import network

    diffuse = np.asarray(diffuse, dtype=np.float64)
    if diffuse.shape != (mesh.vertex_count, 3):
        raise core.ValidationError("diffuse table does not cover the mesh")
    colors = np.clip(diffuse, 0.0, 1.0).copy()

    vert_ids, _ = backface_cull(mesh, camera)
    if vert_ids.size:
        kept, _, d_tilde, _ = vertex_view_directions(mesh, vert_ids, camera)
        if kept.size:
            inputs = encode_inputs(mesh.uvs[kept], d_tilde)
            # predictions quantized to f32: batch-size-independent bit for
            # bit (BLAS reassociation noise is ~1 f64 ulp) and the precision
            # external decoders reproduce
            q = core.f32grid(network.forward(net, inputs))
            residual = decode_targets(q)
            colors[kept] = np.clip(diffuse[kept] + residual, 0.0, 1.0)
    return colors


def render_frame(mesh, net, diffuse, camera, resolution=None):
    """One free-viewpoint frame: batched inference then rasterization."""
    colors = dslf_vertex_colors(mesh, net, diffuse, camera)
    return render_vertex_colors(mesh, colors, camera, resolution=resolution)


# ---------------------------------------------------------------------------
# z-buffer vertex visibility (used by the capture and culling stages)


def vertex_visibility(mesh, camera, resolution=None, rel_tol=1e-6):
    """Per-vertex visibility by the z-buffer test.

    The rasterized id buffer supplies, for each vertex, the candidate
    occluders that win any pixel in the 3x3 neighborhood of its projection.
    Each candidate is then evaluated exactly at the vertex's own subpixel
    position (screen-space coverage plus perspective-correct depth), so the
    decision matches ray casting up to faces that win no nearby pixel.
    Returns a boolean array of length vertex_count.
    """
    width, height = resolution or (camera.width, camera.height)
    vert_ids, face_ids = backface_cull(mesh, camera)
    res = rasterize(mesh.positions, mesh.faces[face_ids], camera,
                    face_ids=face_ids, resolution=(width, height))

    xy, z = project_points(mesh.positions, camera)
    visible = np.zeros(mesh.vertex_count, dtype=bool)
    ok = np.zeros(mesh.vertex_count, dtype=bool)
    ok[vert_ids] = True  # must belong to a rendered (front-facing) face
    ok &= (z > NEAR_PLANE) & np.all(np.isfinite(xy), axis=1)
    ok &= ((xy[:, 0] >= 0) & (xy[:, 0] < width)
           & (xy[:, 1] >= 0) & (xy[:, 1] < height))
    idx = np.nonzero(ok)[0]
    if not idx.size:
        return visible

    # Screen projections and camera z of every face corner, for exact
    # candidate evaluation. Faces touching the near plane are skipped here;
    # their pixel-center depths in the buffer still act as a fallback.
    cam_pts = camera_space(mesh.positions, camera)
    sxy, sz = xy, z

    px = np.floor(xy[idx, 0]).astype(np.int64)
    py = np.floor(xy[idx, 1]).astype(np.int64)
    visible[idx] = True
    for k, v in enumerate(idx):
        x0, x1 = max(px[k] - 1, 0), min(px[k] + 1, width - 1)
        y0, y1 = max(py[k] - 1, 0), min(py[k] + 1, height - 1)
        cands = np.unique(res.face_id[y0:y1 + 1, x0:x1 + 1])
        cands = cands[cands >= 0]
        zv = z[v]
        pxv, pyv = xy[v, 0], xy[v, 1]
        for fi in cands:
            tri = mesh.faces[fi]
            tz = sz[tri]
            if np.any(tz <= NEAR_PLANE):
                continue
            ax, ay = sxy[tri[0]]
            bx, by = sxy[tri[1]]
            cx, cy = sxy[tri[2]]
            area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            if abs(area2) < 1e-12:
                continue
            w0 = (cx - bx) * (pyv - by) - (cy - by) * (pxv - bx)
            w1 = (ax - cx) * (pyv - cy) - (ay - cy) * (pxv - cx)
            w2 = (bx - ax) * (pyv - ay) - (by - ay) * (pxv - ax)
            if area2 < 0:
                w0, w1, w2, area2 = -w0, -w1, -w2, -area2
            if w0 < 0 or w1 < 0 or w2 < 0:
                continue
            inv_z = (w0 / tz[0] + w1 / tz[1] + w2 / tz[2]) / area2
            z_face = 1.0 / inv_z
            if z_face < zv * (1.0 - rel_tol) - 1e-9:
                visible[v] = False
                break
    return visible
