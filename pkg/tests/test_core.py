import hashlib

import numpy as np
import pytest

from dslf import core


def write_obj(path, text):
    path.write_text(text)
    return str(path)


TRI_OBJ = """
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1
"""


class TestLoadMesh:
    def test_single_triangle(self, tmp_path):
        mesh = core.load_mesh(write_obj(tmp_path / "tri.obj", TRI_OBJ))
        assert mesh.face_count == 1
        assert mesh.vertex_count == 3
        assert mesh.uvs.shape == (3, 2)
        np.testing.assert_allclose(mesh.normals, [[0, 0, 1]] * 3)

    def test_zero_face_index_rejected(self, tmp_path):
        bad = TRI_OBJ.replace("f 1/1/1 2/2/1 3/3/1", "f 0/1/1 2/2/1 3/3/1")
        with pytest.raises(core.FormatError, match=":9"):
            core.load_mesh(write_obj(tmp_path / "bad.obj", bad))

    def test_missing_uv_rejected(self, tmp_path):
        bad = TRI_OBJ.replace("f 1/1/1 2/2/1 3/3/1", "f 1//1 2//1 3//1")
        with pytest.raises(core.FormatError, match="uv"):
            core.load_mesh(write_obj(tmp_path / "bad.obj", bad))

    def test_missing_normals_computed(self, tmp_path):
        text = """
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
f 1/1 2/2 3/3
"""
        mesh = core.load_mesh(write_obj(tmp_path / "nonorm.obj", text))
        np.testing.assert_allclose(mesh.normals, [[0, 0, 1]] * 3, atol=1e-12)

    def test_degenerate_face_rejected(self, tmp_path):
        text = """
v 0 0 0
v 1 0 0
v 2 0 0
vt 0 0
vt 1 0
vt 0 1
vn 0 0 1
f 1/1/1 2/2/1 3/3/1
"""
        with pytest.raises(core.ValidationError, match="degenerate"):
            core.load_mesh(write_obj(tmp_path / "deg.obj", text))

    def test_non_unit_normals_renormalized(self, tmp_path):
        text = TRI_OBJ.replace("vn 0 0 1", "vn 0 0 2")
        mesh = core.load_mesh(write_obj(tmp_path / "n2.obj", text))
        np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-12)

    def test_save_load_round_trip(self, tmp_path):
        mesh = core.load_mesh(write_obj(tmp_path / "tri.obj", TRI_OBJ))
        out = tmp_path / "back.obj"
        core.save_mesh(mesh, out)
        again = core.load_mesh(str(out))
        np.testing.assert_array_equal(mesh.positions, again.positions)
        np.testing.assert_array_equal(mesh.uvs, again.uvs)
        np.testing.assert_array_equal(mesh.faces, again.faces)

    def test_icosphere_obj_normals_are_normalized_positions(self, tmp_path):
        from dslf import synth
        path = tmp_path / "sphere.obj"
        core.save_mesh(synth.icosphere(2), path)
        mesh = core.load_mesh(path)
        expect = mesh.positions / np.linalg.norm(mesh.positions, axis=1,
                                                 keepdims=True)
        assert np.max(np.abs(mesh.normals - expect)) < 1e-6


def make_dataset(n=10, v=5, seed=0, residual=False, cameras=True):
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rgb = rng.uniform(-1.0 if residual else 0.0, 1.0, size=(n, 3))
    return core.SlfDataset.create(
        "mesh-a",
        vertex_ids=rng.integers(0, v, size=n),
        directions=dirs,
        rgb=rgb,
        direction_space=core.INVERTED_SPACE if residual else core.RAW_SPACE,
        residual=residual,
        diffuse=rng.uniform(0, 1, size=(v, 3)) if residual else None,
        camera_ids=rng.integers(0, 4, size=n) if cameras else None,
    )


class TestDatasetIO:
    @pytest.mark.parametrize("residual,cameras", [(False, True), (True, False), (True, True)])
    def test_round_trip_identical(self, tmp_path, residual, cameras):
        ds = make_dataset(residual=residual, cameras=cameras)
        path = tmp_path / "d.dslf"
        core.save_dataset(ds, path)
        back = core.load_dataset(path)
        assert back.mesh_ref == ds.mesh_ref
        assert back.direction_space == ds.direction_space
        assert back.residual == ds.residual
        np.testing.assert_array_equal(back.vertex_ids, ds.vertex_ids)
        np.testing.assert_array_equal(back.directions, ds.directions)
        np.testing.assert_array_equal(back.rgb, ds.rgb)
        if residual:
            np.testing.assert_array_equal(back.diffuse, ds.diffuse)
        if cameras:
            np.testing.assert_array_equal(back.camera_ids, ds.camera_ids)

    def test_wrong_magic_is_error(self, tmp_path):
        path = tmp_path / "bad.dslf"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(core.FormatError, match="magic"):
            core.load_dataset(path)

    def test_version_mismatch(self, tmp_path):
        ds = make_dataset()
        path = tmp_path / "d.dslf"
        core.save_dataset(ds, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(core.FormatError, match="version"):
            core.load_dataset(path)

    def test_truncated_file(self, tmp_path):
        ds = make_dataset()
        path = tmp_path / "d.dslf"
        core.save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(core.FormatError, match="truncated"):
            core.load_dataset(path)

    def test_large_round_trip_byte_identical(self, tmp_path):
        # Serialization is deterministic: same dataset -> same bytes.
        ds = make_dataset(n=100_000, v=600, seed=7)
        p1, p2 = tmp_path / "a.dslf", tmp_path / "b.dslf"
        core.save_dataset(ds, p1)
        core.save_dataset(core.load_dataset(p1), p2)
        h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert h1 == h2


class TestValidate:
    def make_mesh(self):
        return core.Mesh.create(
            positions=[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]],
            normals=np.tile([0.0, 0.0, 1.0], (5, 1)),
            uvs=np.zeros((5, 2)),
            faces=[[0, 1, 2], [1, 4, 2], [0, 1, 3]],
        )

    def test_valid_dataset_empty_report(self):
        mesh = self.make_mesh()
        assert core.validate(make_dataset(v=5), mesh) == []

    def test_out_of_range_vertex(self):
        mesh = self.make_mesh()
        ds = make_dataset(v=5)
        ids = ds.vertex_ids.copy()
        ids[3] = 5  # == vertex count
        bad = core.SlfDataset.create(ds.mesh_ref, ids, ds.directions, ds.rgb)
        report = core.validate(bad, mesh)
        assert len(report) == 1
        assert "sample 3" in report[0] and "out of range" in report[0]

    def test_non_unit_direction_names_sample(self):
        mesh = self.make_mesh()
        ds = make_dataset(v=5)
        dirs = ds.directions.copy()
        dirs[7] *= 1.1
        bad = core.SlfDataset.create(ds.mesh_ref, ds.vertex_ids, dirs, ds.rgb)
        report = core.validate(bad, mesh)
        assert len(report) == 1
        assert "sample 7" in report[0] and "unit" in report[0]


class TestCameraPose:
    def test_round_trip_json(self, tmp_path):
        K = core.simple_intrinsics(640, 480)
        cam = core.look_at_pose([0, 0, -3], [0, 0, 0], [0, 1, 0], K, 640, 480)
        path = tmp_path / "cam.json"
        core.save_camera(cam, path)
        back = core.load_camera(path)
        np.testing.assert_allclose(back.K, cam.K)
        np.testing.assert_allclose(back.R, cam.R)
        np.testing.assert_allclose(back.t, cam.t)

    def test_rotation_invariants_enforced(self):
        K = core.simple_intrinsics(64, 64)
        R = np.eye(3)
        R[0, 0] = 1.001
        with pytest.raises(core.ValidationError, match="orthonormal"):
            core.CameraPose.create(K, R, np.zeros(3), 64, 64)

    def test_reflection_rejected(self):
        K = core.simple_intrinsics(64, 64)
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(core.ValidationError, match="det"):
            core.CameraPose.create(K, R, np.zeros(3), 64, 64)

    def test_center(self):
        K = core.simple_intrinsics(64, 64)
        cam = core.look_at_pose([1.0, 2.0, 3.0], [0, 0, 0], [0, 1, 0], K, 64, 64)
        np.testing.assert_allclose(cam.center, [1.0, 2.0, 3.0], atol=1e-12)


class TestImages:
    def test_png_round_trip_8bit(self, tmp_path):
        rng = np.random.default_rng(3)
        img = core.Image(np.rint(rng.uniform(size=(17, 23, 3)) * 255) / 255.0)
        path = tmp_path / "x.png"
        img.save_png(path)
        back = core.Image.load_png(path)
        np.testing.assert_allclose(back.pixels, img.pixels, atol=1e-12)

    def test_depth_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        data = rng.uniform(1, 5, size=(9, 11))
        data[0, :] = np.inf
        dm = core.DepthMap(data.astype(np.float32).astype(np.float64))
        path = tmp_path / "d.bin"
        dm.save(path)
        back = core.DepthMap.load(path)
        np.testing.assert_array_equal(back.data, dm.data)
