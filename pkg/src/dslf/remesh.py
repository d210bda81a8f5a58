"""Texture-aware remeshing: superpixel segmentation of the texture by
hill-climbing an energy E = C + gamma*G + beta*B, then splitting mesh faces
along the superpixel boundaries.

Energy terms over a label map with k superpixels (A_k = pixels of label k):

- C (gradient-sign consistency): sum over k of the squared mean of
  sign(delta(i)), where delta is the forward-difference gradient magnitude
  signed by its dominant axis component (sign(0) = 0).
- G (smoothness): per superpixel, the mass of the modal bin of a 16-bin
  histogram of the Laplacian over [-1, 1]; counted only when the modal bin is
  the one containing zero, so flat content scores 1 and edges score 0.
- B (boundary regularity): sum over pixels i and labels k of
  (count of label k in the 3x3 patch around i / 9)^2; blocky boundaries
  score higher than jagged ones.

The climb starts from a regular grid of k blocks, exchanges whole blocks at
coarsening levels and single pixels at the finest level, and accepts a move
only when E strictly increases and both touched superpixels stay non-empty
and 4-connected. Termination follows from the strict increase (E is bounded:
C <= k, G <= k, B <= pixel count).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from dslf import core

log = logging.getLogger(__name__)

HIST_BINS = 16
ZERO_BIN = 8  # bin of value 0 in 16 bins over [-1, 1]
PATCH = 9.0   # 3x3 patch normalizer

LUMA = np.array([0.299, 0.587, 0.114])


def luminance(rgb_pixels):
    return np.asarray(rgb_pixels, dtype=np.float64) @ LUMA


@dataclass(frozen=True)
class EnergyBreakdown:
    C: float
    G: float
    B: float
    gamma: float
    beta: float

    @property
    def E(self):
        return self.C + self.gamma * self.G + self.beta * self.B


@dataclass
class LabelMap:
    labels: np.ndarray  # (H, W) int32
    k: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise core.ValidationError("labels must be (H, W)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise core.ValidationError("label id out of range")

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def height(self):
        return self.labels.shape[0]

    def validate_partition(self):
        """Check non-emptiness and 4-connectivity of every superpixel."""
        for label in range(self.k):
            mask = self.labels == label
            count = int(mask.sum())
            if count == 0:
                raise core.ValidationError(f"superpixel {label} is empty")
            if _component_size(mask) != count:
                raise core.ValidationError(f"superpixel {label} is not 4-connected")

    def save_png16(self, path):
        from PIL import Image as PILImage
        if self.k > 65535:
            raise core.ValidationError("too many labels for 16-bit png")
        PILImage.fromarray(self.labels.astype(np.uint16)).save(path)

    @staticmethod
    def load_png16(path, k=None):
        from PIL import Image as PILImage
        with PILImage.open(path) as im:
            labels = np.asarray(im, dtype=np.int32)
        return LabelMap(labels, k if k is not None else int(labels.max()) + 1)


def _component_size(mask):
    """Size of the 4-connected component containing the first set pixel."""
    ys, xs = np.nonzero(mask)
    if not len(ys):
        return 0
    seen = np.zeros_like(mask)
    stack = [(int(ys[0]), int(xs[0]))]
    seen[ys[0], xs[0]] = True
    n = 0
    h, w = mask.shape
    while stack:
        y, x = stack.pop()
        n += 1
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not seen[yy, xx]:
                seen[yy, xx] = True
                stack.append((yy, xx))
    return n


# ---------------------------------------------------------------------------
# energy terms


def signed_gradient_sign(texture):
    """sign of the forward-difference gradient magnitude, signed by the
    dominant axis component; 0 where the gradient vanishes."""
    t = np.asarray(texture, dtype=np.float64)
    gx = np.zeros_like(t)
    gy = np.zeros_like(t)
    gx[:, :-1] = t[:, 1:] - t[:, :-1]
    gy[:-1, :] = t[1:, :] - t[:-1, :]
    dominant = np.where(np.abs(gx) >= np.abs(gy), gx, gy)
    return np.sign(dominant)


def laplacian_bins(texture):
    """4-neighbor Laplacian with replicated borders, clamped to [-1, 1] and
    quantized into the 16 histogram bins."""
    t = np.asarray(texture, dtype=np.float64)
    p = np.pad(t, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * t
    lap = np.clip(lap, -1.0, 1.0)
    bins = np.floor((lap + 1.0) / (2.0 / HIST_BINS)).astype(np.int64)
    return np.clip(bins, 0, HIST_BINS - 1)


def _c_term(sign_sum, count):
    return (sign_sum / count) ** 2 if count else 0.0


def _g_term(hist, count):
    if not count:
        return 0.0
    top = int(hist.max())
    return top / count if int(hist[ZERO_BIN]) == top else 0.0


def _b_region(labels, y0, y1, x0, x1):
    """B contribution of the pixels in rows [y0, y1) x cols [x0, x1)."""
    h, w = labels.shape
    y0, y1 = max(y0, 0), min(y1, h)
    x0, x1 = max(x0, 0), min(x1, w)
    if y0 >= y1 or x0 >= x1:
        return 0.0
    pad = np.full((y1 - y0 + 2, x1 - x0 + 2), -1, dtype=np.int64)
    cy0, cy1 = max(y0 - 1, 0), min(y1 + 1, h)
    cx0, cx1 = max(x0 - 1, 0), min(x1 + 1, w)
    pad[cy0 - (y0 - 1):cy1 - (y0 - 1), cx0 - (x0 - 1):cx1 - (x0 - 1)] = \
        labels[cy0:cy1, cx0:cx1]
    # stack the 9 neighbors of each region pixel; -1 marks out-of-image
    neigh = np.stack([pad[dy:dy + (y1 - y0), dx:dx + (x1 - x0)]
                      for dy in range(3) for dx in range(3)], axis=-1)
    eq = (neigh[..., :, None] == neigh[..., None, :]) \
        & (neigh[..., :, None] >= 0) & (neigh[..., None, :] >= 0)
    return float(eq.sum()) / (PATCH * PATCH)


def energy(labelmap, texture, gamma=1.0, beta=0.5):
    """Evaluate the full energy breakdown of a label map over a grayscale
    texture in [0, 1]. Raises on empty superpixels."""
    labels = labelmap.labels
    t = np.asarray(texture, dtype=np.float64)
    if t.shape != labels.shape:
        raise core.ValidationError("texture and label map extents differ")
    k = labelmap.k
    counts = np.bincount(labels.ravel(), minlength=k)
    if np.any(counts == 0):
        raise core.ValidationError(
            f"empty superpixels: {np.nonzero(counts == 0)[0][:8].tolist()}")

    signs = signed_gradient_sign(t)
    sign_sums = np.bincount(labels.ravel(), weights=signs.ravel(), minlength=k)
    C = float(np.sum((sign_sums / counts) ** 2))

    bins = laplacian_bins(t)
    hists = np.zeros((k, HIST_BINS), dtype=np.int64)
    np.add.at(hists, (labels.ravel(), bins.ravel()), 1)
    G = float(sum(_g_term(hists[i], counts[i]) for i in range(k)))

    B = _b_region(labels, 0, labels.shape[0], 0, labels.shape[1])
    return EnergyBreakdown(C, G, B, gamma, beta)


# ---------------------------------------------------------------------------
# hill climbing


class _ClimbState:
    """Incremental bookkeeping for single-region label moves."""

    def __init__(self, labels, texture, k, gamma, beta):
        self.labels = labels
        self.k = k
        self.gamma = gamma
        self.beta = beta
        self.signs = signed_gradient_sign(texture)
        self.bins = laplacian_bins(texture)
        self.counts = np.bincount(labels.ravel(), minlength=k).astype(np.int64)
        self.sign_sums = np.bincount(labels.ravel(), weights=self.signs.ravel(),
                                     minlength=k)
        self.hists = np.zeros((k, HIST_BINS), dtype=np.int64)
        np.add.at(self.hists, (labels.ravel(), self.bins.ravel()), 1)
        self.C = float(np.sum((self.sign_sums / self.counts) ** 2))
        self.G = float(sum(_g_term(self.hists[i], self.counts[i]) for i in range(k)))
        self.B = _b_region(labels, 0, labels.shape[0], 0, labels.shape[1])

    @property
    def E(self):
        return self.C + self.gamma * self.G + self.beta * self.B

    def move_delta(self, y0, y1, x0, x1, a, b):
        """Energy delta of relabeling region [y0,y1)x[x0,x1) from a to b.

        Returns (dE, undo_payload) without applying anything permanent; the
        label array IS temporarily modified and restored.
        """
        region = self.labels[y0:y1, x0:x1]
        n = region.size
        s = float(self.signs[y0:y1, x0:x1].sum())
        hist = np.bincount(self.bins[y0:y1, x0:x1].ravel(), minlength=HIST_BINS)

        ca_old = _c_term(self.sign_sums[a], self.counts[a])
        cb_old = _c_term(self.sign_sums[b], self.counts[b])
        ga_old = _g_term(self.hists[a], self.counts[a])
        gb_old = _g_term(self.hists[b], self.counts[b])
        ca_new = _c_term(self.sign_sums[a] - s, self.counts[a] - n)
        cb_new = _c_term(self.sign_sums[b] + s, self.counts[b] + n)
        ga_new = _g_term(self.hists[a] - hist, self.counts[a] - n)
        gb_new = _g_term(self.hists[b] + hist, self.counts[b] + n)
        dC = (ca_new + cb_new) - (ca_old + cb_old)
        dG = (ga_new + gb_new) - (ga_old + gb_old)

        b_before = _b_region(self.labels, y0 - 1, y1 + 1, x0 - 1, x1 + 1)
        keep = region.copy()
        region[:] = b
        b_after = _b_region(self.labels, y0 - 1, y1 + 1, x0 - 1, x1 + 1)
        region[:] = keep
        dB = b_after - b_before
        payload = (n, s, hist, dC, dG, dB)
        return dC + self.gamma * dG + self.beta * dB, payload

    def apply(self, y0, y1, x0, x1, a, b, payload):
        n, s, hist, dC, dG, dB = payload
        self.labels[y0:y1, x0:x1] = b
        self.counts[a] -= n
        self.counts[b] += n
        self.sign_sums[a] -= s
        self.sign_sums[b] += s
        self.hists[a] -= hist
        self.hists[b] += hist
        self.C += dC
        self.G += dG
        self.B += dB


def _locally_connected(mask3x3):
    """True when the set cells of a 3x3 boolean patch (center excluded) form
    one 4-connected component that touches the 4-neighborhood of the center.
    Removing the center then cannot disconnect the region (simple point)."""
    cells = [(y, x) for y in range(3) for x in range(3)
             if (y, x) != (1, 1) and mask3x3[y, x]]
    if not cells:
        return False
    four = [(0, 1), (1, 0), (1, 2), (2, 1)]
    start = next(((y, x) for (y, x) in cells if (y, x) in four), None)
    if start is None:
        return False  # only diagonal support: removal would orphan the corner
    seen = {start}
    stack = [start]
    cellset = set(cells)
    while stack:
        y, x = stack.pop()
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (y + dy, x + dx)
            if nxt in cellset and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen == cellset


def _grid_boundaries(total, parts):
    return [int(round(total * i / parts)) for i in range(parts + 1)]


def _grid_factorization(k, height, width):
    best = None
    for rows in range(1, k + 1):
        if k % rows:
            continue
        cols = k // rows
        if rows > height or cols > width:
            continue
        aspect = abs(np.log((rows / cols) / (height / width)))
        if best is None or aspect < best[0]:
            best = (aspect, rows, cols)
    if best is None:
        raise core.ValidationError(f"cannot place {k} superpixels on {height}x{width}")
    return best[1], best[2]


def initial_grid(height, width, k):
    rows, cols = _grid_factorization(k, height, width)
    ys = _grid_boundaries(height, rows)
    xs = _grid_boundaries(width, cols)
    labels = np.empty((height, width), dtype=np.int32)
    for r in range(rows):
        for c in range(cols):
            labels[ys[r]:ys[r + 1], xs[c]:xs[c + 1]] = r * cols + c
    return labels


def segment_superpixels(texture, k, gamma=1.0, beta=0.5, seed=0,
                        max_sweeps=40, return_trace=False):
    """SEEDS-style hill climbing from a regular grid of k blocks.

    Moves exchange whole cells at coarse levels (cell sizes halving down
    to 2) and then single boundary pixels; a move is accepted iff the energy
    strictly increases and the donor superpixel stays non-empty and
    4-connected. Stops when a full sweep accepts nothing. Deterministic for
    a given seed (the seed shuffles sweep order).
    """
    t = np.asarray(texture, dtype=np.float64)
    if t.ndim == 3:
        t = luminance(t)
    h, w = t.shape
    if k > h * w:
        raise core.ValidationError(f"k={k} exceeds texel count {h * w}")
    if k < 1:
        raise core.ValidationError("k must be >= 1")

    labels = initial_grid(h, w, k)
    state = _ClimbState(labels, t, k, gamma, beta)
    rng = np.random.default_rng(seed)
    trace = [state.E]

    rows, cols = _grid_factorization(k, h, w)
    base = min(h // max(rows, 1), w // max(cols, 1))
    level = 1
    while level * 2 <= base:
        level *= 2
    sizes = []
    while level >= 2:
        sizes.append(level)
        level //= 2

    for size in sizes:
        _sweep_blocks(state, size, rng, trace, max_sweeps)
    _sweep_pixels(state, rng, trace, max_sweeps)

    lm = LabelMap(state.labels.copy(), k)
    lm.validate_partition()
    if return_trace:
        return lm, trace
    return lm


def _sweep_blocks(state, size, rng, trace, max_sweeps):
    h, w = state.labels.shape
    gh = (h + size - 1) // size
    gw = (w + size - 1) // size
    for _ in range(max_sweeps):
        accepted = 0
        order = rng.permutation(gh * gw)
        for cell in order:
            cy, cx = divmod(int(cell), gw)
            y0, y1 = cy * size, min((cy + 1) * size, h)
            x0, x1 = cx * size, min((cx + 1) * size, w)
            block = state.labels[y0:y1, x0:x1]
            a = int(block[0, 0])
            if np.any(block != a):
                continue
            if state.counts[a] <= block.size:
                continue
            # candidate labels among pixels 4-adjacent to the block border
            cand = set()
            if y0 > 0:
                cand |= set(np.unique(state.labels[y0 - 1, x0:x1]).tolist())
            if y1 < h:
                cand |= set(np.unique(state.labels[y1, x0:x1]).tolist())
            if x0 > 0:
                cand |= set(np.unique(state.labels[y0:y1, x0 - 1]).tolist())
            if x1 < w:
                cand |= set(np.unique(state.labels[y0:y1, x1]).tolist())
            cand.discard(a)
            if not cand:
                continue
            best = None
            for b in sorted(cand):
                d, payload = state.move_delta(y0, y1, x0, x1, a, b)
                if d > 1e-12 and (best is None or d > best[0]):
                    best = (d, b, payload)
            if best is None:
                continue
            # exact donor connectivity check (block moves are rare enough
            # that a full flood fill is affordable)
            keep = block.copy()
            state.labels[y0:y1, x0:x1] = best[1]
            donor = state.labels == a
            still_connected = bool(donor.any()) and \
                _component_size(donor) == int(donor.sum())
            state.labels[y0:y1, x0:x1] = keep
            if not still_connected:
                continue
            d, b, payload = best
            state.apply(y0, y1, x0, x1, a, b, payload)
            trace.append(state.E)
            accepted += 1
        if not accepted:
            break


def _sweep_pixels(state, rng, trace, max_sweeps):
    h, w = state.labels.shape
    for _ in range(max_sweeps):
        lab = state.labels
        boundary = np.zeros((h, w), dtype=bool)
        boundary[:-1, :] |= lab[:-1, :] != lab[1:, :]
        boundary[1:, :] |= lab[1:, :] != lab[:-1, :]
        boundary[:, :-1] |= lab[:, :-1] != lab[:, 1:]
        boundary[:, 1:] |= lab[:, 1:] != lab[:, :-1]
        ys, xs = np.nonzero(boundary)
        order = rng.permutation(len(ys))
        accepted = 0
        for idx in order:
            y, x = int(ys[idx]), int(xs[idx])
            a = int(lab[y, x])
            if state.counts[a] <= 1:
                continue
            cand = set()
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and lab[yy, xx] != a:
                    cand.add(int(lab[yy, xx]))
            if not cand:
                continue
            patch = np.zeros((3, 3), dtype=bool)
            for py in range(3):
                for px in range(3):
                    yy, xx = y + py - 1, x + px - 1
                    if 0 <= yy < h and 0 <= xx < w:
                        patch[py, px] = lab[yy, xx] == a
            if not _locally_connected(patch):
                continue
            best = None
            for b in sorted(cand):
                d, payload = state.move_delta(y, y + 1, x, x + 1, a, b)
                if d > 1e-12 and (best is None or d > best[0]):
                    best = (d, b, payload)
            if best is not None:
                d, b, payload = best
                state.apply(y, y + 1, x, x + 1, a, b, payload)
                trace.append(state.E)
                accepted += 1
        if not accepted:
            break


# ---------------------------------------------------------------------------
# marching squares over the label grid


def label_at(labelmap, uv):
    """Label of the texel center nearest to a uv point."""
    h, w = labelmap.labels.shape
    x = int(np.clip(np.floor(uv[0] * w), 0, w - 1))
    y = int(np.clip(np.floor(uv[1] * h), 0, h - 1))
    return int(labelmap.labels[y, x])


def _marching_segments(field, x0, x1, y0, y1, w, h):
    """Midpoint marching-squares segments of a boolean field sampled at texel
    centers, over cells with corner centers in [x0, x1] x [y0, y1].

    Returns segments in uv coordinates. Endpoint coordinates are exact
    half-texel multiples, so shared endpoints match bitwise.
    """
    segs = []

    def uv(cx, cy):
        # cx, cy in half-texel units relative to the center grid
        return ((cx + 0.5) / w, (cy + 0.5) / h)

    for y in range(max(y0, 0), min(y1, h - 1)):
        for x in range(max(x0, 0), min(x1, w - 1)):
            a = field[y, x]
            b = field[y, x + 1]
            c = field[y + 1, x + 1]
            d = field[y + 1, x]
            code = (a << 3) | (b << 2) | (c << 1) | int(d)
            if code in (0, 15):
                continue
            top = (x + 0.5, y)
            right = (x + 1.0, y + 0.5)
            bottom = (x + 0.5, y + 1.0)
            left = (x, y + 0.5)
            table = {
                8: [(top, left)], 4: [(right, top)], 2: [(bottom, right)],
                1: [(left, bottom)],
                12: [(right, left)], 6: [(bottom, top)], 3: [(left, right)],
                9: [(top, bottom)],
                14: [(bottom, left)], 13: [(right, bottom)],
                11: [(top, right)], 7: [(left, top)],
                # saddles: keep the set corners separated
                10: [(top, right), (bottom, left)],
                5: [(right, bottom), (left, top)],
            }
            for p, q in table[code]:
                segs.append((uv(*p), uv(*q)))
    return segs


def _chain_segments(segs):
    """Link segments into polylines; returns (open chains, closed loops)."""
    def key(p):
        return (round(p[0] * 1e12), round(p[1] * 1e12))

    adj = {}
    for i, (p, q) in enumerate(segs):
        adj.setdefault(key(p), []).append((i, 0))
        adj.setdefault(key(q), []).append((i, 1))

    used = [False] * len(segs)
    chains, loops = [], []
    # open chains start at degree-1 endpoints
    for start_key, ends in sorted(adj.items()):
        if len(ends) != 1:
            continue
        i, side = ends[0]
        if used[i]:
            continue
        chain = [segs[i][side], segs[i][1 - side]]
        used[i] = True
        while True:
            ends2 = [e for e in adj.get(key(chain[-1]), []) if not used[e[0]]]
            if not ends2:
                break
            j, sj = ends2[0]
            used[j] = True
            chain.append(segs[j][1 - sj])
        chains.append(chain)
    for i in range(len(segs)):  # remaining are loops
        if used[i]:
            continue
        chain = [segs[i][0], segs[i][1]]
        used[i] = True
        while True:
            ends2 = [e for e in adj.get(key(chain[-1]), []) if not used[e[0]]]
            if not ends2:
                break
            j, sj = ends2[0]
            used[j] = True
            chain.append(segs[j][1 - sj])
        loops.append(chain)
    return chains, loops


# ---------------------------------------------------------------------------
# polygon machinery


def _poly_area(pts):
    pts = np.asarray(pts)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _point_in_poly(pt, pts):
    # ray casting; boundary points are resolved arbitrarily (callers keep
    # query points away from edges)
    x, y = pt
    inside = False
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            if x < x0 + t * (x1 - x0):
                inside = not inside
    return inside


def _seg_intersections(p, q, poly):
    """Intersections of segment p->q with polygon edges: (t, edge, s) list."""
    out = []
    n = len(poly)
    d = (q[0] - p[0], q[1] - p[1])
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        e = (b[0] - a[0], b[1] - a[1])
        denom = d[0] * e[1] - d[1] * e[0]
        if abs(denom) < 1e-18:
            continue
        dx = (a[0] - p[0], a[1] - p[1])
        t = (dx[0] * e[1] - dx[1] * e[0]) / denom
        s = (dx[0] * d[1] - dx[1] * d[0]) / denom
        if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= s <= 1 + 1e-12:
            out.append((min(max(t, 0.0), 1.0), i, min(max(s, 0.0), 1.0)))
    return out


def _clip_chain_to_poly(chain, poly):
    """Portions of a polyline inside a polygon.

    Returns a list of dicts {pts, entry, exit} where entry/exit are
    (edge index, edge parameter) or None when the endpoint is interior.
    """
    pieces = []
    cur = None

    def lerp(p, q, t):
        return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))

    for i in range(len(chain) - 1):
        p, q = chain[i], chain[i + 1]
        hits = sorted(_seg_intersections(p, q, poly))
        ts = [0.0] + [t for t, _, _ in hits] + [1.0]
        for j in range(len(ts) - 1):
            t0, t1 = ts[j], ts[j + 1]
            if t1 - t0 < 1e-12:
                continue
            mid = lerp(p, q, 0.5 * (t0 + t1))
            if _point_in_poly(mid, poly):
                a = lerp(p, q, t0) if t0 > 0 else p
                entry = None
                for t, e, s in hits:
                    if abs(t - t0) < 1e-12:
                        entry = (e, s)
                if cur is None:
                    cur = {"pts": [a], "entry": entry, "exit": None}
                cur["pts"].append(lerp(p, q, t1) if t1 < 1 else q)
                ex = None
                for t, e, s in hits:
                    if abs(t - t1) < 1e-12:
                        ex = (e, s)
                if ex is not None:
                    cur["exit"] = ex
                    pieces.append(cur)
                    cur = None
            else:
                if cur is not None:
                    pieces.append(cur)
                    cur = None
    if cur is not None:
        pieces.append(cur)
    return pieces


def _dedupe_ring(pts, tol=1e-12):
    out = []
    for p in pts:
        if out and abs(p[0] - out[-1][0]) < tol and abs(p[1] - out[-1][1]) < tol:
            continue
        out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) < tol \
            and abs(out[0][1] - out[-1][1]) < tol:
        out.pop()
    return out


def _split_polygon(poly, piece):
    """Split a CCW polygon along a clipped chain crossing its boundary.

    piece: dict from _clip_chain_to_poly with entry and exit set (boundary
    locations as (edge index, edge parameter)). Returns two CCW point lists.
    """
    (e0, s0), (e1, s1) = piece["entry"], piece["exit"]
    chain = piece["pts"]
    n = len(poly)

    def walk(edge_from, s_from, edge_to, s_to):
        """Polygon vertices passed when walking the boundary forward from
        location (edge_from, s_from) to (edge_to, s_to)."""
        if edge_from == edge_to and s_to >= s_from - 1e-15:
            return []
        out = []
        e = (edge_from + 1) % n  # first vertex after the start location
        for _ in range(n + 1):
            out.append(poly[e])
            if e == edge_to:
                return out
            e = (e + 1) % n
        raise core.ValidationError("boundary walk did not terminate")

    half1 = _dedupe_ring(list(chain) + walk(e1, s1, e0, s0))
    half2 = _dedupe_ring(list(reversed(chain)) + walk(e0, s0, e1, s1))
    if _poly_area(half1) < 0:
        half1 = half1[::-1]
    if _poly_area(half2) < 0:
        half2 = half2[::-1]
    return half1, half2


def _ear_clip(pts):
    """Triangulate a simple CCW polygon; returns index triples."""
    n = len(pts)
    if n < 3:
        return []
    idx = list(range(n))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 4 * n * n:
            raise core.ValidationError("ear clipping failed (non-simple polygon)")
        found = False
        for j in range(len(idx)):
            i0, i1, i2 = idx[j - 1], idx[j], idx[(j + 1) % len(idx)]
            a, b, c = pts[i0], pts[i1], pts[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 1e-18:
                continue
            ok = True
            for m in idx:
                if m in (i0, i1, i2):
                    continue
                if _point_in_tri(pts[m], a, b, c):
                    ok = False
                    break
            if ok:
                tris.append((i0, i1, i2))
                idx.pop(j)
                found = True
                break
        if not found:
            # drop an exactly-collinear vertex if one exists, else give up
            for j in range(len(idx)):
                i0, i1, i2 = idx[j - 1], idx[j], idx[(j + 1) % len(idx)]
                a, b, c = pts[i0], pts[i1], pts[i2]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if abs(cross) <= 1e-18:
                    idx.pop(j)
                    found = True
                    break
            if not found:
                raise core.ValidationError("ear clipping failed (non-simple polygon)")
    if len(idx) == 3:
        a, b, c = (pts[i] for i in idx)
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross > 1e-18:
            tris.append(tuple(idx))
    return tris


def _point_in_tri(p, a, b, c):
    d0 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    d1 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
    d2 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
    return d0 > 1e-18 and d1 > 1e-18 and d2 > 1e-18


# ---------------------------------------------------------------------------
# remeshing


def _covered_centers(poly, w, h):
    """Texel centers strictly inside a uv polygon."""
    pts = np.asarray(poly)
    x0 = max(int(np.floor(pts[:, 0].min() * w - 0.5)), 0)
    x1 = min(int(np.ceil(pts[:, 0].max() * w - 0.5)), w - 1)
    y0 = max(int(np.floor(pts[:, 1].min() * h - 0.5)), 0)
    y1 = min(int(np.ceil(pts[:, 1].max() * h - 0.5)), h - 1)
    out = []
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            if _point_in_poly(((x + 0.5) / w, (y + 0.5) / h), poly):
                out.append((y, x))
    return out


def _poly_labels(poly, labelmap):
    """Labels spanned by a uv polygon, judged at covered texel centers.

    Polygon corners are excluded: after a split they lie exactly on label
    boundaries, where the nearest-texel lookup is ambiguous. Polygons too
    small to cover any center take the label at their centroid.
    """
    h, w = labelmap.labels.shape
    labels = {int(labelmap.labels[y, x]) for (y, x) in _covered_centers(poly, w, h)}
    if not labels:
        pts = np.asarray(poly)
        labels.add(label_at(labelmap, pts.mean(axis=0)))
    return labels


class _FaceSplitError(Exception):
    pass


def _simplify_chain(chain):
    """Drop interior points of exactly-collinear runs (no geometry change)."""
    out = list(chain)
    i = 1
    while i + 1 < len(out):
        a, b, c = out[i - 1], out[i], out[i + 1]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross == 0.0:
            out.pop(i)
        else:
            i += 1
    return out


def _split_poly_recursive(poly, labelmap, depth=0):
    """Recursively split a uv polygon until each part spans one label.

    Returns a list of single-label polygons. Raises _FaceSplitError on
    non-simple geometry (island labels, unterminated contours, too deep).
    """
    labels = _poly_labels(poly, labelmap)
    if len(labels) <= 1:
        return [poly]
    if depth > 192:
        # every split strictly reduces the label count on both sides, so
        # this depth is unreachable for any sane superpixel count
        raise _FaceSplitError("split recursion limit")
    h, w = labelmap.labels.shape
    pts = np.asarray(poly)
    x0 = max(int(np.floor(pts[:, 0].min() * w)) - 1, 0)
    x1 = min(int(np.ceil(pts[:, 0].max() * w)) + 1, w - 1)
    y0 = max(int(np.floor(pts[:, 1].min() * h)) - 1, 0)
    y1 = min(int(np.ceil(pts[:, 1].max() * h)) + 1, h - 1)
    reach = 1.5 * max(1.0 / w, 1.0 / h)

    for target in sorted(labels):
        field = labelmap.labels == target
        chains, loops = _chain_segments(
            _marching_segments(field, x0, x1, y0, y1, w, h))

        # Open chains terminate half a texel inside the image border; extend
        # them straight past the uv square so clipping can find the face-edge
        # crossing. Exactly-collinear runs collapse to single segments.
        candidates = []
        for chain in chains:
            chain = _simplify_chain(list(chain))
            for end in (0, -1):
                p = np.asarray(chain[end])
                q = np.asarray(chain[end + 1 if end == 0 else -2])
                d = p - q
                nd = np.linalg.norm(d)
                if nd > 1e-15:
                    ext = tuple(p + d / nd * reach)
                    if end == 0:
                        chain.insert(0, ext)
                    else:
                        chain.append(ext)
            candidates.append(chain)
        candidates += [_simplify_chain(list(c)) for c in loops]

        for chain in candidates:
            for piece in _clip_chain_to_poly(chain, poly):
                if piece["entry"] is None or piece["exit"] is None \
                        or len(piece["pts"]) < 2:
                    continue
                try:
                    half1, half2 = _split_polygon(poly, piece)
                except core.ValidationError:
                    continue
                if len(half1) < 3 or len(half2) < 3:
                    continue
                if abs(abs(_poly_area(half1)) + abs(_poly_area(half2))
                       - abs(_poly_area(poly))) > 1e-9:
                    continue
                # both halves must span strictly fewer labels, otherwise a
                # contour grazing an earlier cut shaves zero-progress slivers
                # forever; this bounds the recursion by the label count
                if len(_poly_labels(half1, labelmap)) >= len(labels) or \
                        len(_poly_labels(half2, labelmap)) >= len(labels):
                    continue
                return (_split_poly_recursive(half1, labelmap, depth + 1)
                        + _split_poly_recursive(half2, labelmap, depth + 1))
    raise _FaceSplitError("no boundary-crossing contour found (island label?)")


def subdivide_midpoint(mesh, levels=1):
    """Uniform four-to-one midpoint subdivision (comparison baseline only).

    Splits every face at its three edge midpoints; positions, normals, and
    uvs are averaged (normals renormalized). Interior geometry stays on the
    original piecewise-linear surface.
    """
    out = mesh
    for _ in range(levels):
        positions = [p for p in out.positions]
        normals = [n for n in out.normals]
        uvs = [t for t in out.uvs]
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                n = normals[a] + normals[b]
                nn = np.linalg.norm(n)
                cache[key] = len(positions)
                positions.append(0.5 * (positions[a] + positions[b]))
                normals.append(n / nn)
                uvs.append(0.5 * (uvs[a] + uvs[b]))
            return cache[key]

        faces = []
        for a, b, c in out.faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        out = core.Mesh.create(np.asarray(positions), np.asarray(normals),
                               np.asarray(uvs), np.asarray(faces, dtype=np.int32))
    return out


def remesh(mesh, labelmap):
    """Split every face whose uv triangle spans more than one superpixel.

    New vertices get 3D position and normal by barycentric interpolation of
    the original face (the geometry stays on the original surface); original
    vertices are never moved. Faces whose clip geometry is non-simple are
    reported and passed through unsplit.

    Returns (mesh, report) where report lists pass-through face ids.
    """
    positions = [p for p in mesh.positions]
    normals = [n for n in mesh.normals]
    uvs = [t for t in mesh.uvs]
    new_faces = []
    skipped = []
    vertex_cache = {}

    def bary_of(uv, tri_uv):
        m = np.array([[tri_uv[1][0] - tri_uv[0][0], tri_uv[2][0] - tri_uv[0][0]],
                      [tri_uv[1][1] - tri_uv[0][1], tri_uv[2][1] - tri_uv[0][1]]])
        det = np.linalg.det(m)
        if abs(det) < 1e-18:
            raise _FaceSplitError("degenerate uv triangle")
        bc = np.linalg.solve(m, np.array([uv[0] - tri_uv[0][0], uv[1] - tri_uv[0][1]]))
        return np.array([1.0 - bc[0] - bc[1], bc[0], bc[1]])

    def vertex_for(uv, face):
        key = (round(uv[0] * 2 ** 30), round(uv[1] * 2 ** 30))
        if key in vertex_cache:
            return vertex_cache[key]
        tri = mesh.faces[face]
        bc = bary_of(uv, mesh.uvs[tri])
        pos = bc @ mesh.positions[tri]
        nrm = bc @ mesh.normals[tri]
        nn = np.linalg.norm(nrm)
        if nn < 1e-12:
            raise _FaceSplitError("degenerate interpolated normal")
        idx = len(positions)
        positions.append(pos)
        normals.append(nrm / nn)
        uvs.append(np.asarray(uv, dtype=np.float64))
        vertex_cache[key] = idx
        return idx

    skipped_out = []
    for fi in range(mesh.face_count):
        tri = mesh.faces[fi]
        tri_uv = [tuple(mesh.uvs[v]) for v in tri]
        poly = tri_uv if _poly_area(tri_uv) > 0 else tri_uv[::-1]
        try:
            labels = _poly_labels(poly, labelmap)
            if len(labels) <= 1:
                new_faces.append(tuple(int(v) for v in tri))
                continue
            parts = _split_poly_recursive(list(poly), labelmap)
            face_tris = []
            tri_area = 0.0
            for part in parts:
                if abs(_poly_area(part)) < 1e-15:
                    continue
                ids = []
                for uv in part:
                    exact = None
                    for v in tri:
                        if abs(mesh.uvs[v][0] - uv[0]) < 1e-12 and \
                           abs(mesh.uvs[v][1] - uv[1]) < 1e-12:
                            exact = int(v)
                            break
                    ids.append(exact if exact is not None else vertex_for(uv, fi))
                for (i0, i1, i2) in _ear_clip(part):
                    if len({ids[i0], ids[i1], ids[i2]}) == 3:
                        face_tris.append((ids[i0], ids[i1], ids[i2]))
                        tri_area += abs(_poly_area([part[i0], part[i1], part[i2]]))
            # audit: the triangulation must tile the face exactly; anything
            # else (pinched polygon, collapsed sliver) falls back to the
            # original face
            if abs(tri_area - abs(_poly_area(poly))) > 1e-10:
                raise _FaceSplitError(
                    f"triangulation area drift {tri_area - abs(_poly_area(poly)):.2e}")
            new_faces.extend(face_tris)
        except (_FaceSplitError, core.ValidationError) as exc:
            log.info("face %d passed through unsplit: %s", fi, exc)
            skipped.append(fi)
            skipped_out.append(len(new_faces))
            new_faces.append(tuple(int(v) for v in tri))

    out = core.Mesh.create(np.asarray(positions), np.asarray(normals),
                           np.clip(np.asarray(uvs), 0.0, 1.0),
                           np.asarray(new_faces, dtype=np.int32))
    return out, {"passthrough_faces": skipped,
                 "passthrough_output_faces": skipped_out}
