import numpy as np
import pytest

from dslf import core, remesh as rm, synth


def vsplit_labels(h, w, boundary_col, k=2):
    labels = np.zeros((h, w), dtype=np.int32)
    labels[:, boundary_col:] = 1
    return rm.LabelMap(labels, k)


class TestEnergy:
    def test_flat_image_c_zero_g_k(self):
        flat = np.full((32, 32), 0.5)
        lm = rm.LabelMap(rm.initial_grid(32, 32, 4), 4)
        e = rm.energy(lm, flat)
        assert e.C == 0.0
        assert e.G == 4.0

    def test_breakdown_identity_exact(self):
        rng = np.random.default_rng(0)
        tex = rng.uniform(size=(24, 24))
        lm = rm.LabelMap(rm.initial_grid(24, 24, 4), 4)
        e = rm.energy(lm, tex, gamma=1.3, beta=0.4)
        assert e.E == e.C + 1.3 * e.G + 0.4 * e.B

    def test_step_edge_partition_maximizes_c(self):
        # 8x8 step image (edge between cols 3 and 4); enumerating every
        # vertical 2-partition, the edge-aligned boundary maximizes C and
        # strictly beats any straddling partition.
        img = np.zeros((8, 8))
        img[:, 4:] = 1.0
        scores = {}
        for b in range(1, 8):
            lm = vsplit_labels(8, 8, b)
            scores[b] = rm.energy(lm, img).C
        assert max(scores, key=scores.get) == 4
        for b in scores:
            if b != 4:
                assert scores[4] > scores[b]

    def test_blocky_beats_jagged_boundary(self):
        flat = np.full((16, 16), 0.5)
        blocky = rm.LabelMap(rm.initial_grid(16, 16, 4), 4)
        jagged_labels = blocky.labels.copy()
        jagged_labels[3, 8] = 0  # one pixel pushed across the boundary
        jagged = rm.LabelMap(jagged_labels, 4)
        assert rm.energy(blocky, flat).B > rm.energy(jagged, flat).B

    def test_empty_superpixel_rejected(self):
        lm = rm.LabelMap(np.zeros((8, 8), dtype=np.int32), 2)
        with pytest.raises(core.ValidationError, match="empty"):
            rm.energy(lm, np.zeros((8, 8)))

    def test_incremental_bookkeeping_matches_full_eval(self):
        rng = np.random.default_rng(1)
        tex = rng.uniform(size=(16, 16))
        labels = rm.initial_grid(16, 16, 4)
        state = rm._ClimbState(labels.copy(), tex, 4, 1.0, 0.5)
        # apply a legal single-pixel move on the boundary and compare
        y, x = 7, 8  # on the vertical boundary of the 2x2 grid
        a, b = int(state.labels[y, x]), int(state.labels[y, x - 1])
        d, payload = state.move_delta(y, y + 1, x, x + 1, a, b)
        state.apply(y, y + 1, x, x + 1, a, b, payload)
        full = rm.energy(rm.LabelMap(state.labels.copy(), 4), tex)
        assert abs(state.C - full.C) < 1e-12
        assert abs(state.G - full.G) < 1e-12
        assert abs(state.B - full.B) < 1e-9


class TestSegmentSuperpixels:
    def quadrant_image(self):
        img = np.zeros((64, 64))
        img[:32, 32:] = 0.33
        img[32:, :32] = 0.66
        img[32:, 32:] = 1.0
        return img

    def test_quadrants_recovered_exactly(self):
        lm = rm.segment_superpixels(self.quadrant_image(), 4, seed=0)
        np.testing.assert_array_equal(lm.labels, rm.initial_grid(64, 64, 4))

    def test_trace_strictly_increasing_and_terminates(self):
        img = np.zeros((8, 64))
        img[:, 24:] = 1.0
        lm, trace = rm.segment_superpixels(img, 2, seed=1, return_trace=True)
        assert all(trace[i + 1] > trace[i] for i in range(len(trace) - 1))
        lm.validate_partition()

    def test_climb_improves_off_grid_edge(self):
        # full-height block moves can walk the k=2 boundary onto the edge
        img = np.zeros((8, 64))
        img[:, 24:] = 1.0
        lm, trace = rm.segment_superpixels(img, 2, seed=1, return_trace=True)
        assert len(trace) > 1  # at least one accepted move
        assert trace[-1] > trace[0]

    def test_same_seed_identical(self):
        img = self.quadrant_image() + 0.05 * np.random.default_rng(3).uniform(size=(64, 64))
        a = rm.segment_superpixels(img, 8, seed=5)
        b = rm.segment_superpixels(img, 8, seed=5)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_partition_always_valid(self):
        rng = np.random.default_rng(4)
        tex = rng.uniform(size=(48, 48))
        lm = rm.segment_superpixels(tex, 9, seed=2)
        lm.validate_partition()
        assert sorted(np.unique(lm.labels).tolist()) == list(range(9))

    def test_k_exceeding_texels_rejected(self):
        with pytest.raises(core.ValidationError, match="exceeds"):
            rm.segment_superpixels(np.zeros((4, 4)), 17)

    def test_png16_round_trip(self, tmp_path):
        lm = rm.LabelMap(rm.initial_grid(32, 32, 16), 16)
        path = tmp_path / "labels.png"
        lm.save_png16(path)
        back = rm.LabelMap.load_png16(path)
        np.testing.assert_array_equal(back.labels, lm.labels)
        assert back.k == 16


def uv_area(mesh):
    return float(np.abs([rm._poly_area(mesh.uvs[f]) for f in mesh.faces]).sum())


def face_label_span(mesh, face, labelmap):
    poly = [tuple(mesh.uvs[v]) for v in face]
    if rm._poly_area(poly) < 0:
        poly = poly[::-1]
    return rm._poly_labels(poly, labelmap)


class TestRemesh:
    def test_single_superpixel_identity(self):
        mesh = synth.plane(2, 2)
        lm = rm.LabelMap(np.zeros((32, 32), dtype=np.int32), 1)
        out, report = rm.remesh(mesh, lm)
        np.testing.assert_array_equal(out.faces, mesh.faces)
        np.testing.assert_array_equal(out.positions, mesh.positions)
        assert report["passthrough_faces"] == []

    def test_quad_split_along_label_edge(self):
        mesh = synth.plane(1, 1)
        lm = vsplit_labels(64, 64, 32)
        out, report = rm.remesh(mesh, lm)
        assert report["passthrough_faces"] == []
        assert out.face_count > mesh.face_count
        assert abs(uv_area(out) - uv_area(mesh)) < 1e-9
        # every face now lies inside one superpixel
        for f in out.faces:
            assert len(face_label_span(out, f, lm)) == 1
        # the split line u = 0.5 appears among the new vertex uvs
        new_uvs = out.uvs[mesh.vertex_count:]
        assert np.any(np.abs(new_uvs[:, 0] - 0.5) < 1e-9)

    def test_postconditions_on_curved_mesh(self):
        mesh = synth.icosphere(2)
        lm = rm.LabelMap(rm.initial_grid(128, 128, 16), 16)
        out, report = rm.remesh(mesh, lm)
        assert out.face_count >= mesh.face_count
        assert abs(uv_area(out) - uv_area(mesh)) < 1e-9
        np.testing.assert_array_equal(out.positions[:mesh.vertex_count],
                                      mesh.positions)
        flagged = set(report["passthrough_output_faces"])
        for i, f in enumerate(out.faces):
            if i not in flagged:
                assert len(face_label_span(out, f, lm)) == 1

    def test_new_geometry_stays_on_surface(self):
        mesh = synth.plane(2, 2)  # planar surface: z must remain 0
        lm = vsplit_labels(64, 64, 20)
        out, _ = rm.remesh(mesh, lm)
        assert np.max(np.abs(out.positions[:, 2])) == 0.0
        # interpolated normals stay unit
        assert np.max(np.abs(np.linalg.norm(out.normals, axis=1) - 1.0)) < 1e-9

    def test_subdivide_midpoint_counts(self):
        mesh = synth.plane(1, 1)
        sub = rm.subdivide_midpoint(mesh, 2)
        assert sub.face_count == mesh.face_count * 16
        assert abs(uv_area(sub) - uv_area(mesh)) < 1e-12
