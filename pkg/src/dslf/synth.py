"""Analytic ground-truth generator: meshes, Phong materials, point lights,
camera rigs, shaded images, and raw ray-sample sets.

Everything here is deterministic for a given config and seed, so downstream
modules can be tested against closed-form expectations instead of captured
data. The shading model is classic Phong (ambient + diffuse + mirror-lobe
specular) with inverse-square light falloff, clamped to [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from dslf import core, renderer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Material:
    kd: np.ndarray          # (3,) diffuse albedo in [0, 1]
    ks: np.ndarray          # (3,) specular albedo in [0, 1]
    shininess: float

    @staticmethod
    def create(kd, ks, shininess):
        kd = np.ascontiguousarray(kd, dtype=np.float64)
        ks = np.ascontiguousarray(ks, dtype=np.float64)
        m = Material(kd, ks, float(shininess))
        if kd.shape != (3,) or ks.shape != (3,):
            raise core.ValidationError("kd/ks must be 3-vectors")
        if np.any(kd < 0) or np.any(ks < 0) or np.any(kd + ks > 1.0 + 1e-12):
            raise core.ValidationError("albedos must satisfy 0 <= kd, ks and kd + ks <= 1")
        if not np.isfinite(m.shininess) or m.shininess <= 0:
            raise core.ValidationError("shininess must be a positive finite number")
        return m


@dataclass(frozen=True)
class Scene:
    mesh: core.Mesh
    materials: tuple
    vertex_materials: np.ndarray        # (V,) int32 into materials
    point_lights: tuple                 # ((position, intensity), ...)
    ambient: np.ndarray                 # (3,)
    region_map: np.ndarray | None = None  # (H, W) int32 material ids in uv space

    def __post_init__(self):
        if len(self.point_lights) < 1:
            raise core.ValidationError("a scene needs at least one light")
        if self.vertex_materials.shape != (self.mesh.vertex_count,):
            raise core.ValidationError("vertex material assignment must cover the mesh")
        if self.vertex_materials.size and (
                self.vertex_materials.min() < 0
                or self.vertex_materials.max() >= len(self.materials)):
            raise core.ValidationError("vertex material id out of range")

    def vertex_material_arrays(self):
        kd = np.stack([m.kd for m in self.materials])[self.vertex_materials]
        ks = np.stack([m.ks for m in self.materials])[self.vertex_materials]
        sh = np.asarray([m.shininess for m in self.materials])[self.vertex_materials]
        return kd, ks, sh


# ---------------------------------------------------------------------------
# primitives


def icosphere(level):
    """Unit icosphere with 10 * 4**level + 2 vertices.

    Vertex normals equal the (normalized) positions; uvs are spherical
    coordinates remapped to [0, 1]^2.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(level):
        verts_list = list(verts)
        midpoint = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                m = verts_list[a] + verts_list[b]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(verts_list)
        faces = np.asarray(new_faces, dtype=np.int64)

    uvs = sphere_uvs(verts)
    return core.Mesh.create(verts, verts.copy(), uvs, faces)


def sphere_uvs(unit_positions):
    u = 0.5 + np.arctan2(unit_positions[:, 1], unit_positions[:, 0]) / (2.0 * np.pi)
    v = 0.5 + np.arcsin(np.clip(unit_positions[:, 2], -1.0, 1.0)) / np.pi
    return np.clip(np.stack([u, v], axis=1), 0.0, 1.0)


def plane(rows, cols, size=1.0):
    """Unit plane in the xy plane, normal +z, uv equal to position."""
    ys, xs = np.meshgrid(np.linspace(0, 1, rows + 1), np.linspace(0, 1, cols + 1),
                         indexing="ij")
    uvs = np.stack([xs.ravel(), ys.ravel()], axis=1)
    positions = np.concatenate([(uvs - 0.5) * size, np.zeros((len(uvs), 1))], axis=1)
    normals = np.tile([0.0, 0.0, 1.0], (len(uvs), 1))
    faces = []
    for r in range(rows):
        for c in range(cols):
            a = r * (cols + 1) + c
            b = a + 1
            d = a + (cols + 1)
            e = d + 1
            faces += [[a, b, e], [a, e, d]]
    return core.Mesh.create(positions, normals, uvs, np.asarray(faces, dtype=np.int32))


def torus(major_segments, minor_segments, major_radius=1.0, minor_radius=0.35):
    """Axis-aligned torus around +z; uv = (major angle, minor angle) / 2 pi."""
    us = np.arange(major_segments) / major_segments
    vs = np.arange(minor_segments) / minor_segments
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    a = 2.0 * np.pi * uu
    b = 2.0 * np.pi * vv
    cx = (major_radius + minor_radius * np.cos(b)) * np.cos(a)
    cy = (major_radius + minor_radius * np.cos(b)) * np.sin(a)
    cz = minor_radius * np.sin(b)
    positions = np.stack([cx.ravel(), cy.ravel(), cz.ravel()], axis=1)
    nx = np.cos(b) * np.cos(a)
    ny = np.cos(b) * np.sin(a)
    nz = np.sin(b)
    normals = np.stack([nx.ravel(), ny.ravel(), nz.ravel()], axis=1)
    uvs = np.stack([uu.ravel(), vv.ravel()], axis=1)
    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a0 = i * minor_segments + j
            a1 = i * minor_segments + (j + 1) % minor_segments
            b0 = ((i + 1) % major_segments) * minor_segments + j
            b1 = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            faces += [[a0, b0, b1], [a0, b1, a1]]
    return core.Mesh.create(positions, normals, uvs, np.asarray(faces, dtype=np.int32))


_PRIMITIVES = ("icosphere", "plane", "torus", "obj")


def make_scene(config):
    """Build a deterministic Scene from a config document.

    config keys: ``primitive`` ({"icosphere": {"level": L}} or
    {"plane": {"rows", "cols"}} or {"obj": path}), ``materials`` (list of
    {kd, ks, shininess}), optional ``assignment`` ("uniform" or
    {"vsplit": {"boundary": u0, "resolution": [W, H]}}), ``lights`` (list of
    {position, intensity}), ``ambient``.
    """
    prim = config.get("primitive", {})
    if len(prim) != 1 or next(iter(prim)) not in _PRIMITIVES:
        raise core.ValidationError(
            f"unknown primitive {sorted(prim)}; expected one of {_PRIMITIVES}")
    kind, params = next(iter(prim.items()))
    if kind == "icosphere":
        mesh = icosphere(int(params.get("level", 2)))
    elif kind == "plane":
        mesh = plane(int(params.get("rows", 1)), int(params.get("cols", 1)),
                     float(params.get("size", 1.0)))
    elif kind == "torus":
        mesh = torus(int(params.get("major_segments", 24)),
                     int(params.get("minor_segments", 12)),
                     float(params.get("major_radius", 1.0)),
                     float(params.get("minor_radius", 0.35)))
    else:
        mesh = core.load_mesh(params if isinstance(params, str) else params["path"])

    materials = tuple(Material.create(m["kd"], m["ks"], m["shininess"])
                      for m in config.get("materials", []))
    if not materials:
        raise core.ValidationError("scene config lists no materials")

    lights = tuple((np.asarray(l["position"], dtype=np.float64),
                    np.asarray(l["intensity"], dtype=np.float64))
                   for l in config.get("lights", []))
    if not lights:
        raise core.ValidationError("scene config lists no lights")
    ambient = np.asarray(config.get("ambient", [0.0, 0.0, 0.0]), dtype=np.float64)

    assignment = config.get("assignment", "uniform")
    region_map = None
    if assignment == "uniform":
        vertex_materials = np.zeros(mesh.vertex_count, dtype=np.int32)
    elif isinstance(assignment, dict) and "vsplit" in assignment:
        spec_ = assignment["vsplit"]
        w, h = (int(x) for x in spec_.get("resolution", [256, 256]))
        boundary = float(spec_["boundary"])
        region_map = np.zeros((h, w), dtype=np.int32)
        region_map[:, np.arange(w) >= boundary * w] = 1
        if len(materials) < 2:
            raise core.ValidationError("vsplit assignment needs two materials")
        vertex_materials = lookup_region(region_map, mesh.uvs)
    else:
        raise core.ValidationError(f"unknown material assignment {assignment!r}")

    return Scene(mesh, materials, vertex_materials, lights, ambient, region_map)


def lookup_region(region_map, uvs):
    h, w = region_map.shape
    x = np.clip((np.asarray(uvs)[:, 0] * w).astype(np.int64), 0, w - 1)
    y = np.clip((np.asarray(uvs)[:, 1] * h).astype(np.int64), 0, h - 1)
    return region_map[y, x].astype(np.int32)


# ---------------------------------------------------------------------------
# shading


def phong_radiance(point, normal, view_dir, material, lights, ambient):
    """Radiance leaving ``point`` toward ``view_dir`` (unit, toward camera).

    rgb = ambient * kd
        + sum over lights of (kd * max(n.l, 0) + ks * max(r.v, 0)^shininess)
          * intensity / dist^2,
    with r the light direction mirrored about the normal; clamped to [0, 1].
    """
    rgb = phong_radiance_many(
        np.asarray(point)[None, :], np.asarray(normal)[None, :],
        np.asarray(view_dir)[None, :],
        material.kd[None, :], material.ks[None, :],
        np.asarray([material.shininess]), lights, ambient)
    return rgb[0]


def phong_radiance_many(points, normals, view_dirs, kd, ks, shininess,
                        lights, ambient):
    """Vectorized Phong over N surface samples; see phong_radiance."""
    pts = np.asarray(points, dtype=np.float64)
    n = np.asarray(normals, dtype=np.float64)
    v = np.asarray(view_dirs, dtype=np.float64)
    out = np.asarray(ambient, dtype=np.float64)[None, :] * kd
    for lpos, lint in lights:
        to_light = lpos[None, :] - pts
        dist2 = np.sum(to_light * to_light, axis=1)
        l = to_light / np.sqrt(dist2)[:, None]
        ndl = np.maximum(np.einsum("ij,ij->i", n, l), 0.0)
        r = 2.0 * np.einsum("ij,ij->i", n, l)[:, None] * n - l
        rdv = np.maximum(np.einsum("ij,ij->i", r, v), 0.0)
        spec = np.where(rdv > 0.0, rdv ** shininess, 0.0)
        falloff = (lint[None, :] / dist2[:, None])
        out = out + (kd * ndl[:, None] + ks * spec[:, None]) * falloff
    return np.clip(out, 0.0, 1.0)


def scene_vertex_colors(scene, camera):
    """Phong radiance at every vertex toward the camera (Gouraud input)."""
    mesh = scene.mesh
    d = camera.center[None, :] - mesh.positions
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    kd, ks, sh = scene.vertex_material_arrays()
    return phong_radiance_many(mesh.positions, mesh.normals, d, kd, ks, sh,
                               scene.point_lights, scene.ambient)


def render_scene(scene, camera, resolution=None):
    """Ground-truth image: per-vertex Phong colors rasterized (Gouraud)."""
    colors = scene_vertex_colors(scene, camera)
    return renderer.render_vertex_colors(scene.mesh, colors, camera,
                                         resolution=resolution)


def render_reference(scene, camera, resolution=None):
    """Per-fragment Phong reference: shades each covered pixel with the
    material found at its interpolated uv (region map aware). Used as the
    high-fidelity oracle for remeshing comparisons."""
    res = renderer.render_gbuffer(scene.mesh, camera, resolution=resolution)
    mask = res.mask
    pixels = np.zeros(mask.shape + (3,))
    if np.any(mask):
        uv = res.attrs["uv"][mask]
        nrm = res.attrs["normal"][mask]
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        pos = res.attrs["pos"][mask]
        view = camera.center[None, :] - pos
        view = view / np.linalg.norm(view, axis=1, keepdims=True)
        if scene.region_map is not None:
            mat_ids = lookup_region(scene.region_map, uv)
        else:
            mat_ids = np.zeros(len(uv), dtype=np.int64)
        kd = np.stack([m.kd for m in scene.materials])[mat_ids]
        ks = np.stack([m.ks for m in scene.materials])[mat_ids]
        sh = np.asarray([m.shininess for m in scene.materials])[mat_ids]
        pixels[mask] = phong_radiance_many(pos, nrm, view, kd, ks, sh,
                                           scene.point_lights, scene.ambient)
    return core.Image(pixels, mask=mask)


# ---------------------------------------------------------------------------
# camera rigs


def ring_cameras(count, radius, height=0.0, width=320, height_px=320,
                 fov_deg=45.0, target=(0.0, 0.0, 0.0), phase=0.0):
    """Evenly spaced cameras on a horizontal circle, all looking at target."""
    K = core.simple_intrinsics(width, height_px, fov_deg)
    cams = []
    for i in range(count):
        a = phase + 2.0 * np.pi * i / count
        eye = np.asarray([radius * np.cos(a), radius * np.sin(a), height])
        cams.append(core.look_at_pose(eye, target, [0.0, 0.0, 1.0],
                                      K, width, height_px))
    return cams


def fibonacci_cameras(count, radius, width=320, height_px=320, fov_deg=45.0,
                      target=(0.0, 0.0, 0.0), seed=0, polar_margin=0.15):
    """Cameras on a Fibonacci spiral over the sphere, seeded by a random
    longitude offset; stand-in for viewpoints scattered around the object."""
    rng = np.random.default_rng(seed)
    offset = rng.uniform(0.0, 2.0 * np.pi)
    K = core.simple_intrinsics(width, height_px, fov_deg)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    for i in range(count):
        zf = 1.0 - 2.0 * (i + 0.5) / count
        zf *= (1.0 - polar_margin)  # keep away from the poles (up vector)
        r = np.sqrt(max(0.0, 1.0 - zf * zf))
        a = golden * i + offset
        eye = radius * np.asarray([r * np.cos(a), r * np.sin(a), zf])
        cams.append(core.look_at_pose(eye, target, [0.0, 0.0, 1.0],
                                      K, width, height_px))
    return cams


# ---------------------------------------------------------------------------
# capture


def capture_dataset(scene, cameras, mesh_ref="scene", resolution=None):
    """Sample the surface light field from every camera.

    For each camera and each vertex that passes the z-buffer visibility test,
    emits one sample with direction = unit vector from the vertex toward the
    camera center (raw space) and rgb = phong radiance. Also returns the
    ground-truth rendering per camera. Samples are ordered by (camera,
    vertex), so output is deterministic.
    """
    mesh = scene.mesh
    kd, ks, sh = scene.vertex_material_arrays()
    vertex_ids, camera_ids, dirs, rgbs = [], [], [], []
    images = []
    for ci, cam in enumerate(cameras):
        visible = renderer.vertex_visibility(mesh, cam, resolution=resolution)
        vis_ids = np.nonzero(visible)[0]
        images.append(render_scene(scene, cam, resolution=resolution))
        if not vis_ids.size:
            log.warning("camera %d sees no geometry; zero samples", ci)
            continue
        d = cam.center[None, :] - mesh.positions[vis_ids]
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        rgb = phong_radiance_many(mesh.positions[vis_ids], mesh.normals[vis_ids],
                                  d, kd[vis_ids], ks[vis_ids], sh[vis_ids],
                                  scene.point_lights, scene.ambient)
        # snap to the f32 grid here so the raw file payload is compact and
        # the later diffuse/residual split is exact in float64
        rgb = core.f32grid(rgb)
        vertex_ids.append(vis_ids)
        camera_ids.append(np.full(vis_ids.size, ci, dtype=np.uint32))
        dirs.append(d)
        rgbs.append(rgb)

    if vertex_ids:
        dataset = core.SlfDataset.create(
            mesh_ref,
            np.concatenate(vertex_ids),
            np.concatenate(dirs),
            np.concatenate(rgbs),
            direction_space=core.RAW_SPACE,
            residual=False,
            camera_ids=np.concatenate(camera_ids))
    else:
        dataset = core.SlfDataset.create(
            mesh_ref, np.zeros(0, dtype=np.uint32), np.zeros((0, 3)),
            np.zeros((0, 3)), camera_ids=np.zeros(0, dtype=np.uint32))
    return dataset, images
