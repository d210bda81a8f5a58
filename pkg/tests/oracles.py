"""Independent brute-force references used to check the fast paths.

Everything here is deliberately naive: ray-triangle intersection for every
candidate face, per-element python loops for scalar losses, central finite
differences for gradients. Keep these free of imports from the modules they
check (beyond plain data types).
"""

import numpy as np


def ray_triangle_hits(origin, direction, tri_a, tri_b, tri_c, eps=1e-12):
    """Moller-Trumbore for one ray against many triangles.

    Returns the array of ray parameters t (np.inf where there is no hit).
    """
    e1 = tri_b - tri_a
    e2 = tri_c - tri_a
    pvec = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    t = np.full(len(tri_a), np.inf)
    ok = np.abs(det) > eps
    if not np.any(ok):
        return t
    inv_det = np.zeros_like(det)
    inv_det[ok] = 1.0 / det[ok]
    tvec = origin[None, :] - tri_a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,j->i", qvec, direction) * inv_det
    tt = np.einsum("ij,ij->i", e2, qvec) * inv_det
    hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (tt > eps)
    t[hit] = tt[hit]
    return t


def raycast_pixel_buffer(mesh, camera, face_ids, width, height):
    """Nearest face id and depth per pixel by casting a ray through each
    pixel center. Slow; use on small resolutions only."""
    tri = mesh.positions[mesh.faces[face_ids]]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    center = camera.center
    Kinv = np.linalg.inv(camera.K)
    ids = np.full((height, width), -1, dtype=np.int64)
    depth = np.full((height, width), np.inf)
    for y in range(height):
        for x in range(width):
            pix = np.array([x + 0.5, y + 0.5, 1.0])
            d_cam = Kinv @ pix
            d_world = camera.R.T @ d_cam
            t = ray_triangle_hits(center, d_world, a, b, c)
            j = int(np.argmin(t))
            if np.isfinite(t[j]):
                ids[y, x] = face_ids[j]
                depth[y, x] = t[j] * d_cam[2]  # camera-space z at the hit
    return ids, depth


def raycast_vertex_visibility(mesh, camera, face_ids, t_eps=1e-6):
    """A vertex is visible iff the segment from the camera center to the
    vertex meets no face strictly before the vertex. A hit at t = 1 is the
    vertex itself (a corner of its incident faces) and does not occlude; a
    hit through a face interior at t < 1 - eps does, incident or not."""
    tri = mesh.positions[mesh.faces[face_ids]]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    center = camera.center
    p_cam = mesh.positions @ camera.R.T + camera.t
    visible = np.zeros(mesh.vertex_count, dtype=bool)
    for v in range(mesh.vertex_count):
        if p_cam[v, 2] <= 1e-3:
            continue
        xy = camera.K @ p_cam[v]
        px, py = xy[0] / xy[2], xy[1] / xy[2]
        if not (0 <= px < camera.width and 0 <= py < camera.height):
            continue
        seg = mesh.positions[v] - center
        t = ray_triangle_hits(center, seg, a, b, c)
        visible[v] = not np.any(t < 1.0 - t_eps)
    return visible
