import numpy as np
import pytest

from dslf import core, network as nw


def toy_arch(skip=2):
    # direction stream 3->8->4, position stream 2->8->4, trunk 8->8->3
    return nw.ArchSpec(l1_dims=(8, 4), l2_dims=(8, 4), trunk_dims=(8,), skip=skip)


def random_batch(b=8, seed=0):
    rng = np.random.default_rng(seed)
    x = np.empty((b, 5))
    x[:, :2] = rng.uniform(-1, 1, (b, 2))
    d = rng.normal(size=(b, 3))
    x[:, 2:] = d / np.linalg.norm(d, axis=1, keepdims=True)
    y = rng.uniform(0.1, 0.9, (b, 3))
    return x, y


class TestArchitecture:
    def test_default_parameter_count_golden(self):
        # Frozen from the closed form sum(in*out + out), recomputed here by
        # hand so the production helper is not its own oracle.
        layers = [(3, 512), (512, 256),                      # direction stream
                  (2, 512), (512, 256), (256, 192),          # position stream
                  (448, 1000), (1000, 800), (800 + 448, 600), (600, 3)]
        by_hand = sum(i * o + o for i, o in layers)
        assert by_hand == 2_316_587
        assert nw.parameter_count(nw.ArchSpec()) == by_hand
        net = nw.init_network(seed=0)
        assert net.parameter_count() == by_hand

    def test_seed_determinism(self):
        a = nw.init_network(toy_arch(), seed=7)
        b = nw.init_network(toy_arch(), seed=7)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)
        c = nw.init_network(toy_arch(), seed=8)
        assert any(not np.array_equal(wa, wc)
                   for wa, wc in zip(a.weights, c.weights))

    def test_dimension_chain_mismatch_rejected(self):
        net = nw.init_network(toy_arch(), seed=0)
        bad = [w.copy() for w in net.weights]
        bad[0] = np.zeros((4, 8))
        with pytest.raises(core.ValidationError, match="shape"):
            nw.DslfNet(net.arch, bad, [b.copy() for b in net.biases])

    def test_degenerate_skip_rejected(self):
        with pytest.raises(core.ValidationError, match="skip"):
            nw.init_network(nw.ArchSpec(l1_dims=(4,), l2_dims=(4,),
                                        trunk_dims=(8,), skip=1))


class TestForward:
    def test_zero_net_outputs_half(self):
        net = nw.init_network(toy_arch(), seed=0)
        for w in net.weights:
            w[:] = 0.0
        x, _ = random_batch(6)
        np.testing.assert_array_equal(nw.forward(net, x), np.full((6, 3), 0.5))

    def test_duplicated_rows_duplicated_outputs(self):
        net = nw.init_network(toy_arch(), seed=1)
        x, _ = random_batch(4, seed=3)
        xx = np.concatenate([x, x])
        q = nw.forward(net, xx)
        np.testing.assert_array_equal(q[:4], q[4:])

    def test_batch_order_equivariance(self):
        net = nw.init_network(toy_arch(), seed=1)
        x, _ = random_batch(16, seed=4)
        perm = np.random.default_rng(0).permutation(16)
        np.testing.assert_array_equal(nw.forward(net, x)[perm],
                                      nw.forward(net, x[perm]))

    def test_single_neuron_chain_by_hand(self):
        # 3->1 relu, 2->1 relu, concat(2) -> 3 sigmoid; computed on paper.
        arch = nw.ArchSpec(l1_dims=(1,), l2_dims=(1,), trunk_dims=(), skip=None)
        net = nw.init_network(arch, seed=0)
        net.weights[0][:] = np.array([[0.5], [-0.25], [1.0]])
        net.biases[0][:] = 0.1
        net.weights[1][:] = np.array([[2.0], [-1.0]])
        net.biases[1][:] = -0.05
        net.weights[2][:] = np.array([[0.3, -0.6, 1.2], [0.8, 0.0, -0.4]])
        net.biases[2][:] = np.array([0.01, -0.02, 0.03])
        x = np.array([[0.4, -0.2, 0.1, -0.5, 0.6]])
        h1 = max(0.1 * 0.5 + (-0.5) * (-0.25) + 0.6 * 1.0 + 0.1, 0.0)
        h2 = max(0.4 * 2.0 + (-0.2) * (-1.0) - 0.05, 0.0)
        z = np.array([h1 * 0.3 + h2 * 0.8 + 0.01,
                      h1 * -0.6 + h2 * 0.0 - 0.02,
                      h1 * 1.2 + h2 * -0.4 + 0.03])
        expect = 1.0 / (1.0 + np.exp(-z))
        np.testing.assert_allclose(nw.forward(net, x)[0], expect, atol=1e-7)

    def test_outputs_strictly_inside_unit_interval(self):
        net = nw.init_network(toy_arch(), seed=2)
        for w in net.weights:
            w *= 50.0  # saturate the sigmoid
        x, _ = random_batch(32, seed=5)
        q = nw.forward(net, x)
        assert np.all(q > 0.0) and np.all(q < 1.0)

    def test_non_finite_input_rejected(self):
        net = nw.init_network(toy_arch(), seed=0)
        x, _ = random_batch(2)
        x[0, 0] = np.nan
        with pytest.raises(core.ValidationError, match="finite"):
            nw.forward(net, x)


def scalar_kl_oracle(q, p, eps=1e-7):
    """Per-element python-loop Bernoulli KL, independently coded."""
    total = 0.0
    qf, pf = q.ravel(), p.ravel()
    for qi, pi in zip(qf, pf):
        qi = min(max(qi, eps), 1 - eps)
        pi = min(max(pi, eps), 1 - eps)
        total += pi * np.log(pi / qi) + (1 - pi) * np.log((1 - pi) / (1 - qi))
    return total / len(qf)


class TestKlLoss:
    def test_equal_arrays_zero(self):
        p = np.full((5, 3), 0.3)
        assert nw.kl_loss(p, p) == 0.0

    def test_ln2_closed_form(self):
        val = nw.kl_loss(np.full((4, 3), 0.5), np.ones((4, 3)))
        assert abs(val - np.log(2.0)) < 5e-6  # clamp effect only

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(9)
        q = rng.uniform(0.01, 0.99, (13, 3))
        p = rng.uniform(0.0, 1.0, (13, 3))
        assert abs(nw.kl_loss(q, p) - scalar_kl_oracle(q, p)) < 1e-9

    def test_nonnegative_random(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            q = rng.uniform(0, 1, (4, 3))
            p = rng.uniform(0, 1, (4, 3))
            assert nw.kl_loss(q, p) >= 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(core.ValidationError, match="shape"):
            nw.kl_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestBackward:
    def test_gradients_zero_at_minimum(self):
        net = nw.init_network(toy_arch(), seed=3)
        x, _ = random_batch(8, seed=6)
        p = nw.forward(net, x)  # targets equal predictions
        _, (gw, gb) = nw.backward(net, x, p)
        for g in gw + gb:
            assert np.max(np.abs(g)) < 1e-6

    def test_finite_difference_oracle(self):
        net = nw.init_network(toy_arch(), seed=4)
        x, y = random_batch(8, seed=7)
        assert nw.gradient_check(net, x, y) < 1e-3

    def test_skipless_equals_plain_mlp_gradients(self):
        # A skip net whose skip-block weight rows are zero must produce the
        # same gradients on shared parameters as the skip-free architecture.
        a = nw.init_network(toy_arch(skip=2), seed=5)
        b = nw.init_network(toy_arch(skip=None), seed=5)
        concat = a.arch.concat_dim
        for i in range(len(a.weights)):
            if a.weights[i].shape == b.weights[i].shape:
                a.weights[i][:] = b.weights[i]
            else:  # skip-widened layer: first rows shared, skip rows zeroed
                a.weights[i][: b.weights[i].shape[0]] = b.weights[i]
                a.weights[i][b.weights[i].shape[0]:] = 0.0
            a.biases[i][:] = b.biases[i]
        x, y = random_batch(8, seed=8)
        np.testing.assert_array_equal(nw.forward(a, x), nw.forward(b, x))
        _, (gwa, gba) = nw.backward(a, x, y)
        _, (gwb, gbb) = nw.backward(b, x, y)
        for i in range(len(gwa)):
            rows = gwb[i].shape[0]
            np.testing.assert_allclose(gwa[i][:rows], gwb[i], atol=1e-15)
            np.testing.assert_allclose(gba[i], gbb[i], atol=1e-15)


class FakeNet:
    """Single-parameter stand-in matching the adam_step interface."""
    def __init__(self, w0):
        self.weights = [np.array([[w0]])]
        self.biases = [np.zeros(1)]


class TestAdam:
    def test_zero_gradients_leave_parameters(self):
        net = nw.init_network(toy_arch(), seed=6)
        before = [w.copy() for w in net.weights]
        grads = ([np.zeros_like(w) for w in net.weights],
                 [np.zeros_like(b) for b in net.biases])
        state = nw.AdamState.for_net(net)
        nw.adam_step(net, grads, state, lr=1e-3)
        for w0, w1 in zip(before, net.weights):
            np.testing.assert_array_equal(w0, w1)

    def test_scalar_quadratic_monotone(self):
        # f(w) = w^2 from w0 = 1; lr chosen so 50 steps stay in the monotone
        # descent regime (Adam's near-constant step would overshoot zero and
        # oscillate at lr = 0.1 after ~12 steps).
        net = FakeNet(1.0)
        state = nw.AdamState.for_net(net)
        prev = abs(net.weights[0][0, 0])
        for _ in range(50):
            w = net.weights[0][0, 0]
            grads = ([np.array([[2.0 * w]])], [np.zeros(1)])
            nw.adam_step(net, grads, state, lr=0.01)
            cur = abs(net.weights[0][0, 0])
            assert cur < prev
            prev = cur

    def test_step_count_increments(self):
        net = FakeNet(0.5)
        state = nw.AdamState.for_net(net)
        grads = ([np.array([[1.0]])], [np.zeros(1)])
        nw.adam_step(net, grads, state, lr=0.01)
        assert state.step == 1
        nw.adam_step(net, grads, state, lr=0.01)
        assert state.step == 2


@pytest.fixture(scope="module")
def small_tuples():
    rng = np.random.default_rng(20)
    n = 500
    x = np.empty((n, 5))
    x[:, :2] = rng.uniform(-1, 1, (n, 2))
    d = rng.normal(size=(n, 3))
    x[:, 2:] = d / np.linalg.norm(d, axis=1, keepdims=True)
    # a smooth learnable target
    y = 0.5 + 0.3 * np.sin(3 * x[:, :3]) * np.cos(2 * x[:, 2:5])
    return x, np.clip(y, 0.05, 0.95)


class TestTrain:
    def test_overfit_smoke(self, small_tuples):
        x, y = small_tuples
        net = nw.init_network(nw.TINY_ARCH, seed=0)
        init_kl = nw.kl_loss(nw.forward(net, x), y)
        sched = nw.TrainSchedule(batch_size=128, iterations_per_epoch=200,
                                 stages=((10, 1e-3),), seed=0, holdout_fraction=0.0)
        result = nw.train(net, x, y, sched)
        assert result.train_curve[-1] <= init_kl / 100.0

    def test_zero_lr_is_identity(self, small_tuples):
        x, y = small_tuples
        net = nw.init_network(nw.TINY_ARCH, seed=1)
        before = [w.copy() for w in net.weights]
        sched = nw.TrainSchedule(batch_size=128, iterations_per_epoch=50,
                                 stages=((3, 0.0),), seed=0)
        result = nw.train(net, x, y, sched)
        for w0, w1 in zip(before, result.final_net.weights):
            np.testing.assert_array_equal(w0, w1)
        # frozen parameters: the holdout loss is exactly flat
        assert len(set(result.holdout_curve)) == 1

    def test_seed_reproducibility(self, small_tuples):
        x, y = small_tuples
        sched = nw.TrainSchedule(batch_size=128, iterations_per_epoch=100,
                                 stages=((3, 1e-3),), seed=5)
        r1 = nw.train(nw.init_network(nw.TINY_ARCH, seed=2), x, y, sched)
        r2 = nw.train(nw.init_network(nw.TINY_ARCH, seed=2), x, y, sched)
        assert r1.train_curve == r2.train_curve
        assert r1.holdout_curve == r2.holdout_curve

    def test_insufficient_data_rejected(self):
        x = np.zeros((10, 5))
        y = np.full((10, 3), 0.5)
        with pytest.raises(core.ValidationError, match="batch_size"):
            nw.train(nw.init_network(nw.TINY_ARCH, seed=0), x, y,
                     nw.TrainSchedule(batch_size=64))


class TestSerialization:
    def test_round_trip_forward_bit_exact(self):
        net = nw.init_network(toy_arch(), seed=9)
        x, _ = random_batch(12, seed=11)
        blob = nw.serialize(net)
        back = nw.deserialize(blob)
        np.testing.assert_array_equal(nw.forward(net, x), nw.forward(back, x))

    def test_size_arithmetic(self):
        for arch in (toy_arch(), nw.TINY_ARCH, nw.ArchSpec()):
            net = nw.init_network(arch, seed=0)
            blob = nw.serialize(net)
            desc_len = int(np.frombuffer(blob[12:16], dtype="<u4")[0])
            assert len(blob) == 16 + desc_len + 4 * net.parameter_count()
            assert len(blob) == nw.serialized_size(arch)

    def test_truncated_rejected(self):
        net = nw.init_network(toy_arch(), seed=9)
        blob = nw.serialize(net)
        with pytest.raises(core.FormatError, match="truncated"):
            nw.deserialize(blob[:-7])

    def test_bad_magic_rejected(self):
        with pytest.raises(core.FormatError, match="magic"):
            nw.deserialize(b"XXXX" + b"\x00" * 32)

    def test_trained_net_round_trips(self, small_tuples):
        # after training, parameters must still sit on the f32 grid
        x, y = small_tuples
        net = nw.init_network(nw.TINY_ARCH, seed=3)
        sched = nw.TrainSchedule(batch_size=128, iterations_per_epoch=50,
                                 stages=((1, 1e-3),), seed=0)
        result = nw.train(net, x, y, sched)
        back = nw.deserialize(nw.serialize(result.final_net))
        np.testing.assert_array_equal(nw.forward(result.final_net, x),
                                      nw.forward(back, x))


class TestGradientCheck:
    def test_twenty_seeded_toy_nets(self):
        worst = 0.0
        for seed in range(20):
            arch = toy_arch(skip=2 if seed % 2 == 0 else None)
            net = nw.init_network(arch, seed=seed)
            x, y = random_batch(8, seed=100 + seed)
            worst = max(worst, nw.gradient_check(net, x, y))
        assert worst < 1e-3

    def test_mutation_detected(self):
        net = nw.init_network(toy_arch(), seed=12)
        x, y = random_batch(8, seed=13)
        loss, (gw, gb) = nw.backward(net, x, y)
        gw[3] = gw[3] * 2.0  # corrupt one weight-matrix gradient

        # re-implement the comparison against the corrupted analytic grads
        worst = 0.0
        for i in (3,):
            for k in range(gw[i].size):
                idx = np.unravel_index(k, gw[i].shape)
                keep = net.weights[i][idx]
                net.weights[i][idx] = keep + 1e-3
                up = nw.kl_loss(nw.forward(net, x), y)
                net.weights[i][idx] = keep - 1e-3
                dn = nw.kl_loss(nw.forward(net, x), y)
                net.weights[i][idx] = keep
                numeric = (up - dn) / 2e-3
                err = abs(gw[i][idx] - numeric) / max(abs(gw[i][idx]), abs(numeric), 1e-8)
                worst = max(worst, err)
        assert worst > 0.3

    def test_batch_of_one(self):
        net = nw.init_network(toy_arch(), seed=14)
        x, y = random_batch(1, seed=15)
        assert nw.gradient_check(net, x, y) < 1e-3
