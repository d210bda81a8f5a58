"""The residual predictor: two parallel fully-connected input streams (ray
direction and texture position), a concatenation, and a deep trunk with one
skip connection re-injecting the concatenated stream features, trained with a
per-channel Bernoulli KL loss under Adam.

Parameters are float64 in memory but live on the float32 grid (every update
snaps them), so the f32 file format round-trips bit exactly while gradient
checks retain double precision.

Input rows are (2u-1, 2v-1, dx, dy, dz): columns 2..4 feed the direction
stream, columns 0..1 the position stream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from dslf import core

NET_MAGIC = b"DNET"
NET_VERSION = 1

RELU = "relu"
SIGMOID = "sigmoid"

KL_EPS = 1e-7
SIGMOID_CLIP = 1e-15

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise core.ValidationError("layer dimensions must be positive")
        if self.activation not in (RELU, SIGMOID, "identity"):
            raise core.ValidationError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description: hidden widths per stream plus trunk.

    ``skip`` names the 1-based trunk layer whose input is widened by the
    concatenated stream features (None disables the skip path). The default
    matches the reference sizes: direction stream 3->512->256, position
    stream 2->512->256->192, trunk 448->1000->800->600->3 with the 448-wide
    concat re-entering at trunk layer 3 (input 800+448).
    """
    l1_dims: tuple = (512, 256)
    l2_dims: tuple = (512, 256, 192)
    trunk_dims: tuple = (1000, 800, 600)
    skip: int | None = 3

    @property
    def concat_dim(self):
        return self.l1_dims[-1] + self.l2_dims[-1]

    def layer_specs(self):
        l1, l2, trunk = [], [], []
        prev = 3
        for w in self.l1_dims:
            l1.append(LayerSpec(prev, w, RELU))
            prev = w
        prev = 2
        for w in self.l2_dims:
            l2.append(LayerSpec(prev, w, RELU))
            prev = w
        prev = self.concat_dim
        dims = list(self.trunk_dims) + [3]
        for i, w in enumerate(dims):
            in_dim = prev
            if self.skip is not None and i + 1 == self.skip:
                in_dim += self.concat_dim
            act = SIGMOID if i == len(dims) - 1 else RELU
            trunk.append(LayerSpec(in_dim, w, act))
            prev = w
        return l1, l2, trunk

    def validate(self):
        if self.skip is not None:
            if not (1 <= self.skip <= len(self.trunk_dims) + 1):
                raise core.ValidationError("skip target outside the trunk")
            if self.skip == 1:
                raise core.ValidationError(
                    "skip into trunk layer 1 is degenerate (input is already the concat)")

    def to_dict(self):
        return {"l1": list(self.l1_dims), "l2": list(self.l2_dims),
                "trunk": list(self.trunk_dims), "skip": self.skip}

    @staticmethod
    def from_dict(d):
        return ArchSpec(tuple(d["l1"]), tuple(d["l2"]), tuple(d["trunk"]),
                        d.get("skip"))


DESK_ARCH = ArchSpec(l1_dims=(64, 32), l2_dims=(64, 32, 24),
                     trunk_dims=(125, 100, 75), skip=3)

TINY_ARCH = ArchSpec(l1_dims=(32, 16), l2_dims=(32, 16, 12),
                     trunk_dims=(64, 50, 38), skip=3)


@dataclass
class DslfNet:
    arch: ArchSpec
    weights: list          # per layer (in_dim, out_dim) float64 on f32 grid
    biases: list           # per layer (out_dim,) float64 on f32 grid

    def __post_init__(self):
        specs = flat_layer_specs(self.arch)
        if len(self.weights) != len(specs) or len(self.biases) != len(specs):
            raise core.ValidationError("layer count mismatch")
        for (w, b, s) in zip(self.weights, self.biases, specs):
            if w.shape != (s.in_dim, s.out_dim) or b.shape != (s.out_dim,):
                raise core.ValidationError(
                    f"parameter shape {w.shape}/{b.shape} does not match layer "
                    f"{s.in_dim}->{s.out_dim}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise core.ValidationError("non-finite parameter")

    def parameter_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return DslfNet(self.arch, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])


def flat_layer_specs(arch):
    l1, l2, trunk = arch.layer_specs()
    return l1 + l2 + trunk


def parameter_count(arch):
    """Closed-form parameter count: sum over layers of in*out + out."""
    return sum(s.in_dim * s.out_dim + s.out_dim for s in flat_layer_specs(arch))


def init_network(arch=None, seed=0):
    """He-uniform init (bound sqrt(6/in_dim)) for relu layers, Xavier-uniform
    (bound sqrt(6/(in+out))) for the sigmoid output, zero biases.
    Deterministic per seed; parameters land on the f32 grid."""
    arch = arch or ArchSpec()
    arch.validate()
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for s in flat_layer_specs(arch):
        if s.activation == SIGMOID:
            bound = np.sqrt(6.0 / (s.in_dim + s.out_dim))
        else:
            bound = np.sqrt(6.0 / s.in_dim)
        weights.append(core.f32grid(rng.uniform(-bound, bound, size=(s.in_dim, s.out_dim))))
        biases.append(np.zeros(s.out_dim))
    return DslfNet(arch, weights, biases)


def _apply(act, z):
    if act == RELU:
        return np.maximum(z, 0.0)
    if act == SIGMOID:
        with np.errstate(over="ignore"):
            return np.clip(1.0 / (1.0 + np.exp(-z)), SIGMOID_CLIP, 1.0 - SIGMOID_CLIP)
    return z


def _split(net):
    n1 = len(net.arch.l1_dims)
    n2 = len(net.arch.l2_dims)
    return n1, n2


def _forward_trace(net, inputs):
    """Forward pass keeping every pre-activation input (for backprop).

    Returns (output, trace) where trace holds the input of each layer.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 5:
        raise core.ValidationError("inputs must be (B, 5)")
    if not np.all(np.isfinite(x)):
        raise core.ValidationError("non-finite network input")
    n1, n2 = _split(net)
    specs = flat_layer_specs(net.arch)
    skip = net.arch.skip

    h = x[:, 2:5]
    l1_inputs = []
    for i in range(n1):
        l1_inputs.append(h)
        h = _apply(specs[i].activation, h @ net.weights[i] + net.biases[i])
    out1 = h

    h = x[:, 0:2]
    l2_inputs = []
    for i in range(n1, n1 + n2):
        l2_inputs.append(h)
        h = _apply(specs[i].activation, h @ net.weights[i] + net.biases[i])
    out2 = h

    concat = np.concatenate([out1, out2], axis=1)
    h = concat
    trunk_inputs = []
    for j, i in enumerate(range(n1 + n2, len(specs))):
        if skip is not None and j + 1 == skip:
            h = np.concatenate([h, concat], axis=1)
        trunk_inputs.append(h)
        h = _apply(specs[i].activation, h @ net.weights[i] + net.biases[i])
    return h, (l1_inputs, l2_inputs, trunk_inputs, concat)


def forward(net, inputs):
    """Batched prediction; output strictly inside (0, 1). Pure function."""
    out, _ = _forward_trace(net, inputs)
    return out


def kl_loss(q, p):
    """Mean per-entry Bernoulli KL divergence D(p || q).

    Both arguments are clamped to [1e-7, 1 - 1e-7]; the result is >= 0 and 0
    iff the clamped arrays are equal.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise core.ValidationError(f"shape mismatch {q.shape} vs {p.shape}")
    qc = np.clip(q, KL_EPS, 1.0 - KL_EPS)
    pc = np.clip(p, KL_EPS, 1.0 - KL_EPS)
    terms = pc * (np.log(pc) - np.log(qc)) + (1.0 - pc) * (np.log1p(-pc) - np.log1p(-qc))
    return float(np.mean(terms))


def backward(net, inputs, targets):
    """Analytic gradients of kl_loss(forward(net, inputs), targets).

    At the sigmoid pre-activation the KL gradient collapses to
    (q - p) / N with N the entry count; gradients flow through both the trunk
    path and the skip path and sum at the concatenated features.
    Returns (loss, grads) with grads shaped like (weights, biases).
    """
    q, (l1_inputs, l2_inputs, trunk_inputs, concat) = _forward_trace(net, inputs)
    p = np.clip(np.asarray(targets, dtype=np.float64), KL_EPS, 1.0 - KL_EPS)
    if p.shape != q.shape:
        raise core.ValidationError(f"shape mismatch {p.shape} vs {q.shape}")
    loss = kl_loss(q, p)

    n1, n2 = _split(net)
    skip = net.arch.skip
    gw = [np.zeros_like(w) for w in net.weights]
    gb = [np.zeros_like(b) for b in net.biases]

    # Trunk, backwards. delta holds dL/dz of the current layer; the relu
    # derivative is gated by the activation output (> 0), which equals the
    # pre-activation sign away from the measure-zero boundary.
    delta = (q - p) / q.size
    d_concat = np.zeros_like(concat)
    trunk_ids = list(range(n1 + n2, len(net.weights)))
    for j in range(len(trunk_ids) - 1, -1, -1):
        i = trunk_ids[j]
        h_in = trunk_inputs[j]
        gw[i] = h_in.T @ delta
        gb[i] = delta.sum(axis=0)
        d_in = delta @ net.weights[i].T
        if skip is not None and j + 1 == skip:
            base = h_in.shape[1] - concat.shape[1]
            d_concat += d_in[:, base:]
            d_in = d_in[:, :base]
        if j > 0:
            prev_out = trunk_inputs[j][:, :d_in.shape[1]]
            delta = d_in * (prev_out > 0.0)
        else:
            d_concat += d_in

    # Split the concat gradient into the two streams. Stream outputs are the
    # next layer's input (or the concat blocks for the last layer).
    out1_dim = net.arch.l1_dims[-1]
    for stream_ids, stream_inputs, stream_out, d_out in (
            (list(range(n1)), l1_inputs, concat[:, :out1_dim], d_concat[:, :out1_dim]),
            (list(range(n1, n1 + n2)), l2_inputs, concat[:, out1_dim:], d_concat[:, out1_dim:])):
        delta = d_out
        for j in range(len(stream_ids) - 1, -1, -1):
            i = stream_ids[j]
            h_in = stream_inputs[j]
            out = stream_inputs[j + 1] if j + 1 < len(stream_ids) else stream_out
            delta = delta * (out > 0.0)
            gw[i] = h_in.T @ delta
            gb[i] = delta.sum(axis=0)
            if j > 0:
                delta = delta @ net.weights[i].T
    return loss, (gw, gb)


@dataclass
class AdamState:
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0

    @staticmethod
    def for_net(net):
        return AdamState([np.zeros_like(w) for w in net.weights],
                         [np.zeros_like(w) for w in net.weights],
                         [np.zeros_like(b) for b in net.biases],
                         [np.zeros_like(b) for b in net.biases])


def adam_step(net, grads, state, lr):
    """Standard bias-corrected Adam update, in place; beta1=0.9, beta2=0.999,
    eps=1e-8. Updated parameters are snapped back onto the f32 grid."""
    gw, gb = grads
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for i in range(len(net.weights)):
        for params, grad, m, v in ((net.weights, gw, state.m_w, state.v_w),
                                   (net.biases, gb, state.m_b, state.v_b)):
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i]
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] ** 2
            if lr != 0.0:
                mhat = m[i] / c1
                vhat = v[i] / c2
                params[i] = core.f32grid(params[i] - lr * mhat / (np.sqrt(vhat) + ADAM_EPS))
    return net, state


@dataclass
class TrainSchedule:
    """Learning-rate stages are (epochs, lr) pairs; iterations are per epoch."""
    batch_size: int = 512
    iterations_per_epoch: int = 1000
    stages: tuple = ((14, 1e-4), (6, 1e-5))
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise core.ValidationError("batch_size must be >= 1")
        if not self.stages:
            raise core.ValidationError("schedule needs at least one stage")

    @property
    def total_epochs(self):
        return sum(int(e) for e, _ in self.stages)


PAPER_SCHEDULE = TrainSchedule(batch_size=1500, iterations_per_epoch=60_000,
                               stages=((10, 1e-4), (10, 1e-5)))


@dataclass
class TrainResult:
    net: DslfNet                 # best-holdout snapshot
    final_net: DslfNet
    train_curve: list            # per-epoch mean train KL
    holdout_curve: list          # per-epoch holdout KL
    best_epoch: int


def train(net, inputs, targets, schedule=None, state=None):
    """Seeded mini-batch Adam training; returns the best-holdout snapshot.

    Shuffling, the holdout split, and batch order all derive from the
    schedule seed, so runs are bit-reproducible.
    """
    schedule = schedule or TrainSchedule()
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    n = len(x)
    if n < schedule.batch_size:
        raise core.ValidationError(
            f"need at least batch_size={schedule.batch_size} tuples, got {n}")
    rng = np.random.default_rng(schedule.seed)
    perm = rng.permutation(n)
    n_hold = int(round(n * schedule.holdout_fraction))
    hold, tr = perm[:n_hold], perm[n_hold:]
    if not len(tr):
        raise core.ValidationError("holdout fraction leaves no training data")
    xh, yh = x[hold], y[hold]
    xt, yt = x[tr], y[tr]

    state = state or AdamState.for_net(net)
    train_curve, holdout_curve = [], []
    best = (np.inf, 0, net.copy())
    cursor = len(xt)  # force an initial shuffle
    order = None
    for epoch_lr in [lr for epochs, lr in schedule.stages for _ in range(int(epochs))]:
        losses = np.empty(schedule.iterations_per_epoch)
        for it in range(schedule.iterations_per_epoch):
            if cursor + schedule.batch_size > len(xt):
                order = rng.permutation(len(xt))
                cursor = 0
            sel = order[cursor:cursor + schedule.batch_size]
            cursor += schedule.batch_size
            loss, grads = backward(net, xt[sel], yt[sel])
            adam_step(net, grads, state, epoch_lr)
            losses[it] = loss
        train_curve.append(float(losses.mean()))
        h = kl_loss(forward(net, xh), yh) if len(xh) else train_curve[-1]
        holdout_curve.append(h)
        if h < best[0]:
            best = (h, len(holdout_curve), net.copy())
    return TrainResult(best[2], net, train_curve, holdout_curve, best[1])


# ---------------------------------------------------------------------------
# serialization


def _descriptor(net):
    return json.dumps({"arch": net.arch.to_dict(), "version": NET_VERSION},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize(net):
    """16-byte magic/version header, a JSON arch descriptor, then per layer
    the f32 weights row-major followed by the f32 biases."""
    desc = _descriptor(net)
    blob = bytearray()
    blob += NET_MAGIC
    blob += struct.pack("<III", NET_VERSION, 0, len(desc))
    blob += desc
    for w, b in zip(net.weights, net.biases):
        blob += w.astype("<f4").tobytes()
        blob += b.astype("<f4").tobytes()
    return bytes(blob)


def serialized_size(arch, with_header=True):
    desc = json.dumps({"arch": arch.to_dict(), "version": NET_VERSION},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    return (16 + len(desc) if with_header else 0) + 4 * parameter_count(arch)


def deserialize(blob):
    if blob[:4] != NET_MAGIC:
        raise core.FormatError(f"bad magic {blob[:4]!r}")
    version, _, desc_len = struct.unpack_from("<III", blob, 4)
    if version != NET_VERSION:
        raise core.FormatError(f"unsupported net version {version}")
    off = 16
    if off + desc_len > len(blob):
        raise core.FormatError("truncated descriptor")
    desc = json.loads(blob[off:off + desc_len].decode("utf-8"))
    arch = ArchSpec.from_dict(desc["arch"])
    off += desc_len
    weights, biases = [], []
    for s in flat_layer_specs(arch):
        nw = s.in_dim * s.out_dim
        need = 4 * (nw + s.out_dim)
        if off + need > len(blob):
            raise core.FormatError("truncated weight payload")
        w = np.frombuffer(blob, dtype="<f4", count=nw, offset=off).astype(np.float64)
        off += 4 * nw
        b = np.frombuffer(blob, dtype="<f4", count=s.out_dim, offset=off).astype(np.float64)
        off += 4 * s.out_dim
        weights.append(w.reshape(s.in_dim, s.out_dim))
        biases.append(b)
    if off != len(blob):
        raise core.FormatError(f"{len(blob) - off} trailing bytes")
    return DslfNet(arch, weights, biases)


def save_net(net, path):
    with open(path, "wb") as fh:
        fh.write(serialize(net))


def load_net(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def save_manifest(net, path, weights_filename):
    """JSON companion for external decoders: dims, activations, skip tag, and
    byte offsets of every weight/bias block inside the DNET file."""
    desc = _descriptor(net)
    offset = 16 + len(desc)
    layers = []
    for s, w in zip(flat_layer_specs(net.arch), net.weights):
        entry = {
            "in_dim": s.in_dim, "out_dim": s.out_dim, "activation": s.activation,
            "weights_offset": offset, "weights_bytes": 4 * w.size,
        }
        offset += 4 * w.size
        entry["bias_offset"] = offset
        entry["bias_bytes"] = 4 * s.out_dim
        offset += 4 * s.out_dim
        layers.append(entry)
    doc = {
        "format": "dnet",
        "version": NET_VERSION,
        "weights_file": weights_filename,
        "arch": net.arch.to_dict(),
        "l1_layer_count": len(net.arch.l1_dims),
        "l2_layer_count": len(net.arch.l2_dims),
        "layers": layers,
        "input_layout": ["2u-1", "2v-1", "dx", "dy", "dz"],
        "target_decode": "residual = 2q - 1",
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# gradient checking


def _relu_pattern(net, inputs):
    """Concatenated activity pattern of every relu unit for the batch."""
    _, (l1_inputs, l2_inputs, trunk_inputs, concat) = _forward_trace(net, inputs)
    blocks = [h > 0.0 for h in l1_inputs[1:] + l2_inputs[1:] + trunk_inputs[1:]]
    blocks.append(concat > 0.0)
    return np.concatenate([b.ravel() for b in blocks]) if blocks else np.zeros(0, bool)


def gradient_check(net, inputs, targets, h=1e-3, limit=None, seed=0):
    """Central-difference check of every parameter gradient.

    Returns the max over checked parameters of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    Central differences are only meaningful where the loss is smooth on
    [theta - h, theta + h]; a parameter whose perturbation flips a relu unit
    on or off for some batch row straddles a kink and is skipped (the secant
    there does not estimate the one-sided derivative the analytic gradient
    reports). ``limit`` caps the number of parameters checked per array
    (sampled with a seeded rng); None checks all of them.
    """
    _, (gw, gb) = backward(net, inputs, targets)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def loss_and_pattern():
        q = forward(net, inputs)
        return kl_loss(q, targets), _relu_pattern(net, inputs)

    def check_array(param, grad):
        nonlocal worst
        flat_idx = np.arange(param.size)
        if limit is not None and param.size > limit:
            flat_idx = rng.choice(param.size, size=limit, replace=False)
        for k in flat_idx:
            idx = np.unravel_index(k, param.shape)
            keep = param[idx]
            param[idx] = keep + h
            up, pat_up = loss_and_pattern()
            param[idx] = keep - h
            dn, pat_dn = loss_and_pattern()
            param[idx] = keep
            if not np.array_equal(pat_up, pat_dn):
                continue  # relu kink inside the interval
            numeric = (up - dn) / (2.0 * h)
            analytic = grad[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)

    for i in range(len(net.weights)):
        check_array(net.weights[i], gw[i])
        check_array(net.biases[i], gb[i])
    return worst
