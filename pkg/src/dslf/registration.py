"""Camera registration on given correspondences: two-view bootstrap from the
essential matrix, P3P/PnP pose insertion, triangulation, Levenberg-Marquardt
bundle adjustment, and depth-assisted PnP refinement.

Feature extraction is out of scope; every solver consumes explicit pixel or
pixel/3D correspondences. All solvers are deterministic given inputs and the
RANSAC seed. Returned rotations are orthonormal with det +1 within 1e-9.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from dslf import core

log = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    """Input geometry does not determine a solution."""


class NoConsensusError(ValueError):
    """RANSAC found no model supported by enough inliers."""


@dataclass
class RansacConfig:
    threshold_px: float = 1.0
    confidence: float = 0.999
    max_iterations: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class ReconState:
    """Poses, points, and weighted observations of one reconstruction."""
    poses: tuple                 # CameraPose per view
    points: np.ndarray           # (P, 3)
    obs_view: np.ndarray         # (M,) view index
    obs_point: np.ndarray        # (M,) point index
    obs_px: np.ndarray           # (M, 2) measured pixels
    weights: np.ndarray          # (M,) binary visibility

    @staticmethod
    def create(poses, points, obs_view, obs_point, obs_px, weights=None):
        points = np.ascontiguousarray(points, dtype=np.float64)
        obs_view = np.ascontiguousarray(obs_view, dtype=np.int64)
        obs_point = np.ascontiguousarray(obs_point, dtype=np.int64)
        obs_px = np.ascontiguousarray(obs_px, dtype=np.float64)
        if weights is None:
            weights = np.ones(len(obs_view))
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if obs_view.size and (obs_view.min() < 0 or obs_view.max() >= len(poses)):
            raise core.ValidationError("observation references a missing pose")
        if obs_point.size and (obs_point.min() < 0 or obs_point.max() >= len(points)):
            raise core.ValidationError("observation references a missing point")
        if not set(np.unique(weights)) <= {0.0, 1.0}:
            raise core.ValidationError("weights must be binary")
        return ReconState(tuple(poses), points, obs_view, obs_point, obs_px, weights)


def _homogeneous(px):
    px = np.asarray(px, dtype=np.float64)
    return np.concatenate([px, np.ones((len(px), 1))], axis=1)


def project(K, R, t, X):
    """Pinhole projection of world points (N, 3) to pixels (N, 2)."""
    p = np.atleast_2d(X) @ R.T + t
    h = p @ K.T
    return h[:, :2] / h[:, 2:3]


# ---------------------------------------------------------------------------
# two-view geometry


def _eight_point(x0n, x1n):
    """Essential matrix from normalized (calibrated) correspondences by the
    direct linear solve with Hartley rescaling; singular values projected to
    (1, 1, 0). Returns (E, smallest two singular values of the system)."""

    def hartley(x):
        mean = x.mean(axis=0)
        d = np.sqrt(((x - mean) ** 2).sum(axis=1)).mean()
        s = np.sqrt(2.0) / max(d, 1e-12)
        T = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])
        return (x - mean) * s, T

    a, Ta = hartley(x0n)
    b, Tb = hartley(x1n)
    A = np.column_stack([
        b[:, 0] * a[:, 0], b[:, 0] * a[:, 1], b[:, 0],
        b[:, 1] * a[:, 0], b[:, 1] * a[:, 1], b[:, 1],
        a[:, 0], a[:, 1], np.ones(len(a))])
    _, s, vt = np.linalg.svd(A)
    E = vt[-1].reshape(3, 3)
    E = Tb.T @ E @ Ta
    u, sv, vt = np.linalg.svd(E)
    E = u @ np.diag([1.0, 1.0, 0.0]) @ vt
    return E, s


def sampson_distance(E, K0, K1, x0, x1):
    """First-order geometric (Sampson) distance in pixels for each pair."""
    F = np.linalg.inv(K1).T @ E @ np.linalg.inv(K0)
    h0 = _homogeneous(x0)
    h1 = _homogeneous(x1)
    Fx0 = h0 @ F.T
    Ftx1 = h1 @ F
    num = np.einsum("ij,ij->i", h1, Fx0)
    den = Fx0[:, 0] ** 2 + Fx0[:, 1] ** 2 + Ftx1[:, 0] ** 2 + Ftx1[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def estimate_essential(x0, x1, K0, K1, config=None):
    """Seeded RANSAC around the normalized 8-point solve.

    Returns (E, inlier index array). E is scaled to singular values (1, 1, 0).
    Raises DegenerateGeometryError when there is no parallax or the linear
    system is rank deficient (e.g. identical views), NoConsensusError when no
    sample reaches 8 inliers.
    """
    config = config or RansacConfig()
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    n = len(x0)
    if n < 8:
        raise core.ValidationError(f"need at least 8 correspondences, got {n}")

    disparity = np.linalg.norm(x1 - x0, axis=1)
    if np.median(disparity) < 1e-9:
        raise DegenerateGeometryError("no parallax between the two views")

    x0n = (np.linalg.inv(K0) @ _homogeneous(x0).T).T[:, :2]
    x1n = (np.linalg.inv(K1) @ _homogeneous(x1).T).T[:, :2]

    rng = np.random.default_rng(config.seed)
    best_inliers = np.zeros(0, dtype=np.int64)
    best_E = None
    iterations = config.max_iterations
    it = 0
    while it < iterations:
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            E, _ = _eight_point(x0n[sample], x1n[sample])
        except np.linalg.LinAlgError:
            continue
        d = sampson_distance(E, K0, K1, x0, x1)
        inliers = np.nonzero(d < config.threshold_px)[0]
        if len(inliers) > len(best_inliers):
            best_inliers, best_E = inliers, E
            w = max(len(inliers) / n, 1e-9)
            if w < 1.0:
                need = np.log(1.0 - config.confidence) / np.log(1.0 - w ** 8)
                iterations = min(config.max_iterations, int(np.ceil(need)))
            else:
                iterations = it

    if best_E is None or len(best_inliers) < 8:
        raise NoConsensusError("RANSAC found no 8-point consensus")

    E, sv = _eight_point(x0n[best_inliers], x1n[best_inliers])
    # a single-dimensional nullspace needs the second-smallest singular
    # value well away from zero relative to the largest
    if sv[-2] < 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError(
            "epipolar system is rank deficient (degenerate configuration)")
    d = sampson_distance(E, K0, K1, x0, x1)
    inliers = np.nonzero(d < config.threshold_px)[0]
    return E, inliers


def triangulate(x0, x1, pose0, pose1):
    """Linear (DLT) triangulation of one pixel correspondence."""
    P0 = pose0.K @ np.concatenate([pose0.R, pose0.t[:, None]], axis=1)
    P1 = pose1.K @ np.concatenate([pose1.R, pose1.t[:, None]], axis=1)
    baseline = np.linalg.norm(pose1.center - pose0.center)
    if baseline < 1e-12:
        raise DegenerateGeometryError("zero baseline")
    A = np.stack([
        x0[0] * P0[2] - P0[0],
        x0[1] * P0[2] - P0[1],
        x1[0] * P1[2] - P1[0],
        x1[1] * P1[2] - P1[1]])
    _, _, vt = np.linalg.svd(A)
    X = vt[-1]
    if abs(X[3]) < 1e-12 * np.linalg.norm(X[:3]):
        raise DegenerateGeometryError("point at infinity (rays nearly parallel)")
    return X[:3] / X[3]


def _skew(t):
    return np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0.0]])


def decompose_essential(E, x0, x1, K0, K1):
    """Pick the (R, t) candidate placing the most points in front of both
    cameras; t is returned unit length. Raises on a cheirality tie."""
    u, _, vt = np.linalg.svd(E)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    W = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    candidates = []
    for R in (u @ W @ vt, u @ W.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            candidates.append((R, t))

    width = int(np.max(np.abs(np.concatenate([x0, x1]))) * 4) + 1
    pose0 = core.CameraPose.create(K0, np.eye(3), np.zeros(3), width, width)
    counts = []
    for R, t in candidates:
        pose1 = core.CameraPose.create(K1, R, t, width, width)
        front = 0
        for a, b in zip(np.asarray(x0), np.asarray(x1)):
            try:
                X = triangulate(a, b, pose0, pose1)
            except DegenerateGeometryError:
                continue
            z0 = (pose0.R @ X + pose0.t)[2]
            z1 = (pose1.R @ X + pose1.t)[2]
            front += int(z0 > 0 and z1 > 0)
        counts.append(front)
    order = np.argsort(counts)
    if counts[order[-1]] == counts[order[-2]]:
        raise DegenerateGeometryError("cheirality tie between candidates")
    R, t = candidates[order[-1]]
    return R, t / np.linalg.norm(t)


# ---------------------------------------------------------------------------
# P3P / PnP


def _rigid_align(src, dst):
    """Orthogonal Procrustes: R, t with R @ src + t = dst (least squares)."""
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    H = (src - sc).T @ (dst - dc)
    u, _, vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    R = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return R, dc - R @ sc


def solve_p3p(points3d, pixels, K, reproj_tol=1e-6):
    """Pose candidates from three 2D-3D pairs via the law-of-cosines system.

    The three distance equations are reduced (by polynomial elimination, with
    the quartic solved through companion-matrix roots) to camera-frame
    distances; each admissible root yields camera-frame coordinates of the
    three points and a pose by rigid alignment. Only poses reprojecting all
    three points within ``reproj_tol`` pixels are returned (up to 4).
    """
    A, B, C = (np.asarray(p, dtype=np.float64) for p in points3d)
    if np.linalg.norm(np.cross(B - A, C - A)) < 1e-12 * max(
            np.linalg.norm(B - A), np.linalg.norm(C - A), 1.0):
        raise DegenerateGeometryError("collinear world points")

    Kinv = np.linalg.inv(K)
    v = (Kinv @ _homogeneous(np.asarray(pixels)).T).T
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    cos_ab = v[0] @ v[1]
    cos_ac = v[0] @ v[2]
    cos_bc = v[1] @ v[2]
    a2 = float(((B - C) ** 2).sum())  # side opposite A
    b2 = float(((A - C) ** 2).sum())
    c2 = float(((A - B) ** 2).sum())

    # With s1 = |PA|, s2 = u s1, s3 = v s1 the system becomes
    #   (A): u^2 + p1 u + p0(v) = 0      p1 = -2 cos_ab
    #   (B): u^2 + q1(v) u + q0(v) = 0   q1 = -2 cos_bc v
    # whose difference is linear in u; substituting u = Nu(v)/De(v) back into
    # (A) gives a quartic in v, assembled here by polynomial arithmetic
    # (coefficients ascending).
    P = np.polynomial.polynomial
    Q = np.array([1.0, -2.0 * cos_ac, 1.0])            # 1 + v^2 - 2 v cos_ac
    p1 = -2.0 * cos_ab
    p0 = P.polysub([1.0], (c2 / b2) * Q)               # 1 - (c2/b2) Q(v)
    q1 = np.array([0.0, -2.0 * cos_bc])
    q0 = P.polysub([0.0, 0.0, 1.0], (a2 / b2) * Q)     # v^2 - (a2/b2) Q(v)
    Nu = P.polysub(p0, q0)
    De = P.polysub(q1, [p1])
    quartic = P.polyadd(
        P.polyadd(P.polymul(Nu, Nu), P.polymul([p1], P.polymul(Nu, De))),
        P.polymul(p0, P.polymul(De, De)))
    quartic = np.trim_zeros(quartic, "b")
    if len(quartic) < 2:
        raise DegenerateGeometryError("degenerate P3P system")
    roots = P.polyroots(quartic)

    poses = []
    for root in roots:
        if abs(root.imag) > 1e-8 * max(1.0, abs(root.real)):
            continue
        vv = float(root.real)
        if vv <= 0:
            continue
        den = float(P.polyval(vv, De))
        if abs(den) > 1e-12:
            uu = float(P.polyval(vv, Nu)) / den
            u_candidates = [uu]
        else:
            disc = p1 * p1 - 4.0 * float(P.polyval(vv, p0))
            if disc < 0:
                continue
            u_candidates = [(-p1 + s * np.sqrt(disc)) / 2.0 for s in (1.0, -1.0)]
        qv = float(P.polyval(vv, Q))
        if qv <= 0:
            continue
        s1 = np.sqrt(b2 / qv)
        for uu in u_candidates:
            if uu <= 0:
                continue
            cam_pts = np.stack([s1 * v[0], uu * s1 * v[1], vv * s1 * v[2]])
            R, t = _rigid_align(np.stack([A, B, C]), cam_pts)
            err = np.max(np.linalg.norm(
                project(K, R, t, np.stack([A, B, C])) - np.asarray(pixels), axis=1))
            if err < reproj_tol:
                if not any(np.max(np.abs(R - R2)) < 1e-8 and np.max(np.abs(t - t2)) < 1e-8
                           for R2, t2 in poses):
                    poses.append((R, t))
    return poses[:4]


def refine_pose_lm(R, t, points3d, pixels, K, max_iterations=50):
    """Pose-only Levenberg-Marquardt on the reprojection error."""
    X = np.asarray(points3d, dtype=np.float64)
    x = np.asarray(pixels, dtype=np.float64)
    lam = 1e-3

    def residuals(R, t):
        return (project(K, R, t, X) - x).ravel()

    r = residuals(R, t)
    err = float(r @ r)
    for _ in range(max_iterations):
        J = _pose_jacobian(K, R, t, X)
        g = J.T @ r
        H = J.T @ J
        step_ok = False
        for _ in range(12):
            D = np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                delta = np.linalg.solve(H + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_new = _rodrigues(delta[:3]) @ R
            t_new = t + delta[3:]
            r_new = residuals(R_new, t_new)
            err_new = float(r_new @ r_new)
            if err_new < err:
                R, t, r, err = R_new, t_new, r_new, err_new
                lam = max(lam / 10.0, 1e-12)
                step_ok = True
                break
            lam *= 10.0
        if not step_ok or err < 1e-24:
            break
    return R, t


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    axis = w / theta
    Kx = _skew(axis)
    return np.eye(3) + np.sin(theta) * Kx + (1.0 - np.cos(theta)) * (Kx @ Kx)


def pnp_pose(points3d, pixels, K, config=None, width=None, height=None):
    """P3P inside seeded RANSAC over 3-point samples, scored by inlier
    reprojection, then LM-refined on the inliers.

    Returns (CameraPose, inlier index array).
    """
    config = config or RansacConfig()
    X = np.asarray(points3d, dtype=np.float64)
    x = np.asarray(pixels, dtype=np.float64)
    n = len(X)
    if n < 4:
        raise core.ValidationError(f"need at least 4 correspondences, got {n}")

    rng = np.random.default_rng(config.seed)
    best = (0, np.inf, None)  # (count, rms, (R, t))
    best_inliers = None
    iterations = config.max_iterations
    it = 0
    while it < iterations:
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        try:
            candidates = solve_p3p(X[sample], x[sample], K)
        except DegenerateGeometryError:
            continue
        for R, t in candidates:
            d = np.linalg.norm(project(K, R, t, X) - x, axis=1)
            inliers = d < config.threshold_px
            count = int(inliers.sum())
            if count < 4:
                continue
            rms = float(np.sqrt(np.mean(d[inliers] ** 2)))
            if count > best[0] or (count == best[0] and rms < best[1]):
                best = (count, rms, (R, t))
                best_inliers = np.nonzero(inliers)[0]
                w = max(count / n, 1e-9)
                if w < 1.0:
                    need = np.log(1.0 - config.confidence) / np.log(1.0 - w ** 3)
                    iterations = min(config.max_iterations, int(np.ceil(need)))
                else:
                    iterations = min(iterations, it)

    if best[2] is None:
        raise NoConsensusError("PnP RANSAC found no consensus")
    R, t = best[2]
    R, t = refine_pose_lm(R, t, X[best_inliers], x[best_inliers], K)
    span = max(float(np.max(np.abs(x))) * 2.0, 64.0)
    pose = core.CameraPose.create(K, _orthonormalize(R), t,
                                  width or int(np.ceil(span)),
                                  height or int(np.ceil(span)))
    return pose, best_inliers


def _orthonormalize(R):
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        out = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return out


# ---------------------------------------------------------------------------
# bundle adjustment


def _pose_jacobian(K, R, t, X):
    """d(projection)/d(omega, t) for a left axis-angle increment, (2N, 6)."""
    p = X @ R.T + t
    h = p @ K.T
    inv_z = 1.0 / h[:, 2]
    n = len(X)
    # du/dp rows from the chain rule through h = K p
    J = np.zeros((2 * n, 6))
    du_dh = np.zeros((n, 2, 3))
    du_dh[:, 0, 0] = inv_z
    du_dh[:, 0, 2] = -h[:, 0] * inv_z ** 2
    du_dh[:, 1, 1] = inv_z
    du_dh[:, 1, 2] = -h[:, 1] * inv_z ** 2
    du_dp = np.einsum("nij,jk->nik", du_dh, K)
    rx = X @ R.T  # rotated points (before translation)
    for i in range(n):
        dp_dw = -_skew(rx[i])
        J[2 * i:2 * i + 2, :3] = du_dp[i] @ dp_dw
        J[2 * i:2 * i + 2, 3:] = du_dp[i]
    return J


def _point_jacobian(K, R, t, X):
    """d(projection)/dX, (2N, 3) blocks."""
    p = X @ R.T + t
    h = p @ K.T
    inv_z = 1.0 / h[:, 2]
    n = len(X)
    du_dh = np.zeros((n, 2, 3))
    du_dh[:, 0, 0] = inv_z
    du_dh[:, 0, 2] = -h[:, 0] * inv_z ** 2
    du_dh[:, 1, 1] = inv_z
    du_dh[:, 1, 2] = -h[:, 1] * inv_z ** 2
    return np.einsum("nij,jk,kl->nil", du_dh, K, R)


@dataclass
class BundleResult:
    state: ReconState
    error_trace: list      # total squared error after each accepted step
    converged: bool
    iterations: int


def bundle_adjust(state, max_iterations=100, lam0=1e-3, tol=1e-15):
    """Levenberg-Marquardt over all poses (except the gauge) and points.

    Minimizes the weighted squared reprojection error. Rotations move by left
    axis-angle increments; the damping factor multiplies the normal-equation
    diagonal, x10 on a rejected step and /10 on an accepted one. Pose 0 is
    frozen entirely and the largest component of pose 1's translation is held
    fixed to pin the gauge scale. Accepted steps strictly decrease the error.
    """
    poses = [(p.R.copy(), p.t.copy()) for p in state.poses]
    points = state.points.copy()
    n_poses = len(poses)
    n_points = len(points)
    act = state.weights > 0.0
    ov, op, opx = state.obs_view[act], state.obs_point[act], state.obs_px[act]

    if n_poses < 2:
        raise core.ValidationError("bundle adjustment needs at least 2 poses")
    seen_views = set(np.unique(ov).tolist())
    seen_pts = set(np.unique(op).tolist())
    if seen_views != set(range(n_poses)) or seen_pts != set(range(n_points)):
        raise core.ValidationError("observation graph does not cover all poses/points")

    scale_axis = int(np.argmax(np.abs(poses[1][1])))

    # free parameter layout: 6 per pose (pose 0 skipped, pose 1 minus the
    # frozen translation component), then 3 per point
    col_of_pose = {}
    col = 0
    pose_cols = []
    for j in range(1, n_poses):
        cols = [col, col + 1, col + 2]  # rotation
        tcols = []
        for axis in range(3):
            if j == 1 and axis == scale_axis:
                tcols.append(None)
            else:
                tcols.append(col + 3 + len([c for c in tcols if c is not None]))
        k = 3 + sum(c is not None for c in tcols)
        col_of_pose[j] = (cols, tcols)
        col += k
        pose_cols.append(k)
    point_col0 = col
    n_params = col + 3 * n_points

    def residuals():
        r = np.empty((len(ov), 2))
        for j in range(n_poses):
            sel = ov == j
            if not np.any(sel):
                continue
            R, t = poses[j]
            r[sel] = project(state.poses[j].K, R, t, points[op[sel]]) - opx[sel]
        return r.ravel()

    def build_jacobian():
        J = np.zeros((2 * len(ov), n_params))
        for j in range(n_poses):
            sel = np.nonzero(ov == j)[0]
            if not len(sel):
                continue
            R, t = poses[j]
            K = state.poses[j].K
            Xs = points[op[sel]]
            Jp = _pose_jacobian(K, R, t, Xs)        # (2m, 6)
            Jx = _point_jacobian(K, R, t, Xs)       # (m, 2, 3)
            for m, oi in enumerate(sel):
                rows = slice(2 * oi, 2 * oi + 2)
                if j > 0:
                    cols, tcols = col_of_pose[j]
                    J[rows, cols[0]:cols[0] + 3] = Jp[2 * m:2 * m + 2, :3]
                    for axis in range(3):
                        if tcols[axis] is not None:
                            J[rows, tcols[axis]] = Jp[2 * m:2 * m + 2, 3 + axis]
                pc = point_col0 + 3 * op[oi]
                J[rows, pc:pc + 3] = Jx[m]
        return J

    def apply_step(delta):
        new_poses = [(poses[0][0].copy(), poses[0][1].copy())]
        for j in range(1, n_poses):
            cols, tcols = col_of_pose[j]
            w = delta[cols[0]:cols[0] + 3]
            R, t = poses[j]
            t_new = t.copy()
            for axis in range(3):
                if tcols[axis] is not None:
                    t_new[axis] += delta[tcols[axis]]
            new_poses.append((_orthonormalize(_rodrigues(w) @ R), t_new))
        new_points = points + delta[point_col0:].reshape(n_points, 3)
        return new_poses, new_points

    r = residuals()
    err = float(r @ r)
    trace = [err]
    lam = lam0
    converged = False
    it = 0
    rejects = 0
    while it < max_iterations:
        it += 1
        J = build_jacobian()
        g = J.T @ r
        H = J.T @ J
        D = np.diag(np.maximum(np.diag(H), 1e-12))
        try:
            delta = np.linalg.solve(H + lam * D, -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        new_poses, new_points = apply_step(delta)
        keep_poses, keep_points = poses, points
        poses, points = new_poses, new_points
        r_new = residuals()
        err_new = float(r_new @ r_new)
        if err_new < err:
            r, err = r_new, err_new
            trace.append(err)
            lam = max(lam / 10.0, 1e-14)
            rejects = 0
            if err < tol or (len(trace) > 1 and trace[-2] - err < tol * max(1.0, err)):
                converged = True
                break
        else:
            poses, points = keep_poses, keep_points
            lam *= 10.0
            rejects += 1
            if lam > 1e14 or rejects >= 8:
                converged = err < 1e-12 or len(trace) > 1
                break

    out_poses = [state.poses[0]]
    for j in range(1, n_poses):
        R, t = poses[j]
        ref = state.poses[j]
        out_poses.append(core.CameraPose.create(ref.K, R, t, ref.width, ref.height))
    out = ReconState.create(out_poses, points, state.obs_view, state.obs_point,
                            state.obs_px, state.weights)
    return BundleResult(out, trace, converged, it)


def rms_reprojection(state):
    act = state.weights > 0.0
    total = 0.0
    count = 0
    for j, pose in enumerate(state.poses):
        sel = act & (state.obs_view == j)
        if not np.any(sel):
            continue
        d = project(pose.K, pose.R, pose.t, state.points[state.obs_point[sel]]) \
            - state.obs_px[sel]
        total += float((d ** 2).sum())
        count += int(sel.sum())
    return np.sqrt(total / count) if count else 0.0


# ---------------------------------------------------------------------------
# depth-assisted refinement


def backproject_pixel(depth_map, px, py, K, pose):
    """World point seen at a rendered pixel, through the depth map."""
    z = depth_map.data[int(py), int(px)]
    if not np.isfinite(z):
        return None
    d_cam = np.linalg.inv(K) @ np.array([px, py, 1.0])
    p_cam = d_cam / d_cam[2] * z
    return pose.R.T @ (p_cam - pose.t)


def refine_pose_with_depth(depth_map, matches, K, init_pose, config=None):
    """Second-stage registration: lift rendered-view pixels to 3D through the
    companion depth image, pair them with the acquired-view pixels, and rerun
    PnP. Matches that land on background (no depth) are dropped; fewer than 4
    surviving pairs is an error.
    """
    pts3d, pix = [], []
    dropped = 0
    for (rx, ry), acquired in matches:
        X = backproject_pixel(depth_map, rx, ry, K, init_pose)
        if X is None:
            dropped += 1
            continue
        pts3d.append(X)
        pix.append(acquired)
    if len(pts3d) < 4:
        raise core.ValidationError(
            f"only {len(pts3d)} matches have depth (dropped {dropped}); need >= 4")
    pose, _ = pnp_pose(np.asarray(pts3d), np.asarray(pix), K, config,
                       width=init_pose.width, height=init_pose.height)
    if dropped:
        log.info("depth refinement dropped %d background matches", dropped)
    return pose
