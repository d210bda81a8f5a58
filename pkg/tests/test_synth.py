import numpy as np
import pytest

import conftest
from dslf import core, renderer, synth
from oracles import raycast_vertex_visibility


class TestIcosphere:
    @pytest.mark.parametrize("level", [0, 1, 2, 3])
    def test_combinatorics(self, level):
        mesh = synth.icosphere(level)
        assert mesh.vertex_count == 10 * 4 ** level + 2
        assert mesh.face_count == 20 * 4 ** level

    def test_normals_equal_normalized_positions(self):
        mesh = synth.icosphere(3)
        expect = mesh.positions / np.linalg.norm(mesh.positions, axis=1, keepdims=True)
        assert np.max(np.abs(mesh.normals - expect)) < 1e-6

    def test_uvs_inside_unit_square(self):
        mesh = synth.icosphere(2)
        assert mesh.uvs.min() >= 0.0 and mesh.uvs.max() <= 1.0


class TestMakeScene:
    def base_config(self):
        return {
            "primitive": {"icosphere": {"level": 1}},
            "materials": [{"kd": [0.5, 0.5, 0.5], "ks": [0.3, 0.3, 0.3],
                           "shininess": 16.0}],
            "lights": [{"position": [0, 0, 3], "intensity": [1, 1, 1]}],
            "ambient": [0.1, 0.1, 0.1],
        }

    def test_zero_lights_rejected(self):
        cfg = self.base_config()
        cfg["lights"] = []
        with pytest.raises(core.ValidationError, match="light"):
            synth.make_scene(cfg)

    def test_unknown_primitive_rejected(self):
        cfg = self.base_config()
        cfg["primitive"] = {"teapot": {}}
        with pytest.raises(core.ValidationError, match="primitive"):
            synth.make_scene(cfg)

    def test_energy_sanity_enforced(self):
        with pytest.raises(core.ValidationError, match="kd"):
            synth.Material.create([0.7, 0.7, 0.7], [0.5, 0.5, 0.5], 8.0)

    def test_determinism(self):
        a = synth.make_scene(self.base_config())
        b = synth.make_scene(self.base_config())
        np.testing.assert_array_equal(a.mesh.positions, b.mesh.positions)
        np.testing.assert_array_equal(a.vertex_materials, b.vertex_materials)


class TestPhongRadiance:
    def test_pure_diffuse_head_on(self):
        # ks = 0, one light along the normal at unit distance, intensity 1.
        mat = synth.Material.create([0.3, 0.5, 0.7], [0, 0, 0], 8.0)
        rgb = synth.phong_radiance(
            np.zeros(3), np.array([0, 0, 1.0]), np.array([0, 0, 1.0]),
            mat, [(np.array([0, 0, 1.0]), np.ones(3))], np.zeros(3))
        np.testing.assert_allclose(rgb, mat.kd, atol=1e-15)

    def test_light_below_surface_clamps_to_zero(self):
        mat = synth.Material.create([0.4, 0.4, 0.4], [0.4, 0.4, 0.4], 8.0)
        rgb = synth.phong_radiance(
            np.zeros(3), np.array([0, 0, 1.0]), np.array([0, 0, 1.0]),
            mat, [(np.array([0, 0, -2.0]), np.ones(3))], np.zeros(3))
        np.testing.assert_array_equal(rgb, np.zeros(3))

    def test_perfect_mirror_alignment(self):
        # View along the mirror of the light direction: specular cosine is 1.
        mat = synth.Material.create([0.0, 0.0, 0.0], [0.25, 0.5, 0.75], 40.0)
        n = np.array([0, 0, 1.0])
        l = core.normalize([1.0, 0.0, 1.0])
        light_pos = 2.0 * l  # distance 2 -> falloff 1/4
        view = core.normalize([-1.0, 0.0, 1.0])  # mirror of l about n
        rgb = synth.phong_radiance(np.zeros(3), n, view, mat,
                                   [(light_pos, np.ones(3))], np.zeros(3))
        np.testing.assert_allclose(rgb, mat.ks / 4.0, atol=1e-12)


class TestCaptureDataset:
    def test_single_front_triangle_three_samples(self):
        mesh = core.Mesh.create(
            positions=[[-0.5, -0.5, 0], [0.5, -0.5, 0], [0, 0.5, 0]],
            normals=[[0, 0, 1]] * 3,
            uvs=[[0, 0], [1, 0], [0.5, 1]],
            faces=[[0, 1, 2]])
        scene = synth.Scene(
            mesh, (synth.Material.create([0.5, 0.5, 0.5], [0.2, 0.2, 0.2], 8.0),),
            np.zeros(3, dtype=np.int32),
            ((np.array([0, 0, 3.0]), np.ones(3)),), np.zeros(3))
        K = core.simple_intrinsics(120, 120)
        front = core.look_at_pose([0, 0, 2.5], [0, 0, 0], [0, 1, 0], K, 120, 120)
        ds, _ = synth.capture_dataset(scene, [front])
        assert ds.sample_count == 3

        behind = core.look_at_pose([0, 0, -2.5], [0, 0, 0], [0, 1, 0], K, 120, 120)
        ds2, _ = synth.capture_dataset(scene, [behind])
        assert ds2.sample_count == 0

    def test_occluded_vertices_skipped_matches_raycast(self):
        mesh, lower_count = conftest.stacked_quads()
        scene = synth.Scene(
            mesh, (synth.Material.create([0.5, 0.5, 0.5], [0.2, 0.2, 0.2], 8.0),),
            np.zeros(mesh.vertex_count, dtype=np.int32),
            ((np.array([0, 0, 3.0]), np.ones(3)),), np.zeros(3))
        K = core.simple_intrinsics(200, 200)
        cam = core.look_at_pose([0.03, 0.02, 3.0], [0, 0, 0], [0, 1, 0], K, 200, 200)
        ds, _ = synth.capture_dataset(scene, [cam])
        sampled = set(ds.vertex_ids.tolist())
        # the entire lower quad is hidden by the upper one
        assert sampled == set(range(lower_count, mesh.vertex_count))
        oracle = raycast_vertex_visibility(mesh, cam, np.arange(mesh.face_count))
        assert sampled == set(np.nonzero(oracle)[0].tolist())

    def test_sample_rgb_matches_phong_bitwise(self, glossy_sphere_scene, ring_rig, captured):
        ds, _ = captured
        scene = glossy_sphere_scene
        kd, ks, sh = scene.vertex_material_arrays()
        for ci in (0, 5):
            sel = ds.camera_ids == ci
            vids = ds.vertex_ids[sel]
            cam = ring_rig[ci]
            d = cam.center[None, :] - scene.mesh.positions[vids]
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            rgb = synth.phong_radiance_many(
                scene.mesh.positions[vids], scene.mesh.normals[vids], d,
                kd[vids], ks[vids], sh[vids], scene.point_lights, scene.ambient)
            # capture stores on the f32 grid; same function, same quantization
            np.testing.assert_array_equal(ds.rgb[sel], core.f32grid(rgb))

    def test_visibility_agrees_with_raycast_front_facing(self):
        # exhaustive cross-check on small closed meshes, front hemisphere
        cases = [
            (synth.icosphere(2), synth.ring_cameras(4, 3.0, height=0.7)),
            (synth.torus(28, 14), synth.ring_cameras(4, 3.0, height=0.4, width=280, height_px=280)),
        ]
        for mesh, cams in cases:
            all_faces = np.arange(mesh.face_count)
            for cam in cams:
                fast = renderer.vertex_visibility(mesh, cam)
                slow = raycast_vertex_visibility(mesh, cam, all_faces)
                d = cam.center[None, :] - mesh.positions
                d /= np.linalg.norm(d, axis=1, keepdims=True)
                front = np.einsum("ij,ij->i", mesh.normals, d) > 0
                assert np.array_equal(fast[front], slow[front])

    def test_gouraud_image_matches_vertex_radiance(self, glossy_sphere_scene):
        # rasterized color at a vertex projection equals its phong radiance
        scene = glossy_sphere_scene
        cam = synth.ring_cameras(1, 3.0, height=0.3, width=300, height_px=300)[0]
        img = synth.render_scene(scene, cam)
        colors = synth.scene_vertex_colors(scene, cam)
        vis = renderer.vertex_visibility(scene.mesh, cam)
        xy, z = renderer.project_points(scene.mesh.positions, cam)
        checked = 0
        d = cam.center[None, :] - scene.mesh.positions
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        front = np.einsum("ij,ij->i", scene.mesh.normals, d) > 0.2
        for v in np.nonzero(vis & front)[0]:
            px, py = int(xy[v, 0]), int(xy[v, 1])
            if not img.mask[py, px]:
                continue
            if np.max(np.abs(img.pixels[py, px] - colors[v])) <= 2.0 / 255.0:
                checked += 1
        assert checked >= 0.9 * np.sum(vis & front)
