"""Masked image quality metrics (PSNR, single-scale SSIM), the compression
ratio, and the held-out viewpoint evaluation harness with its two baselines
(diffuse-only and nearest-view per-vertex color).

"Effective pixels" are the pixels covered by the object; both metrics ignore
everything outside the mask (background values cannot influence the scores).
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np
from scipy import ndimage

from dslf import core, network, preprocess, renderer, synth

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11

LUMA = np.array([0.299, 0.587, 0.114])


def _pixels(img):
    return img.pixels if isinstance(img, core.Image) else np.asarray(img, dtype=np.float64)


def _resolve_mask(a, b, mask):
    if mask is None:
        for img in (a, b):
            if isinstance(img, core.Image) and img.mask is not None:
                mask = img.mask if mask is None else (mask & img.mask)
    if mask is None:
        raise core.ValidationError("a pixel mask is required (effective pixels)")
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise core.ValidationError("empty mask")
    return mask


def psnr(a, b, mask=None):
    """Peak signal-to-noise ratio in dB over masked pixels, MAX = 1.0.

    Identical masked content returns the +inf sentinel.
    """
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise core.ValidationError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    mask = _resolve_mask(a, b, mask)
    diff = pa[mask] - pb[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel():
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def ssim(a, b, mask=None):
    """Mean single-scale SSIM over windows whose center is masked.

    Computed on luminance with an 11x11 Gaussian window (sigma 1.5),
    K1 = 0.01, K2 = 0.03, L = 1. Pixels outside the mask are zeroed first so
    background content cannot leak into border windows.
    """
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise core.ValidationError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    if pa.shape[0] < SSIM_WINDOW or pa.shape[1] < SSIM_WINDOW:
        raise core.ValidationError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    mask = _resolve_mask(a, b, mask)
    la = np.where(mask, pa @ LUMA, 0.0)
    lb = np.where(mask, pb @ LUMA, 0.0)

    def f(x):
        return ndimage.convolve(x, _KERNEL, mode="reflect")

    mu_a = f(la)
    mu_b = f(lb)
    var_a = f(la * la) - mu_a * mu_a
    var_b = f(lb * lb) - mu_b * mu_b
    cov = f(la * lb) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / \
        ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(np.mean(s[mask]))


def compression_rate(raw_bytes, compressed_bytes):
    """Raw sample-file size over network + diffuse size, as a plain ratio."""
    if raw_bytes <= 0 or compressed_bytes <= 0:
        raise core.ValidationError("sizes must be positive")
    return float(raw_bytes) / float(compressed_bytes)


# ---------------------------------------------------------------------------
# evaluation harness


def heldout_cameras(count, radius, height=0.5, seed=0, width=320, height_px=320,
                    fov_deg=45.0, height_band=0.0, radius_band=0.0):
    """Seeded random novel viewpoints around the capture ring.

    Azimuth is uniform; height and radius are jittered inside
    [height - height_band, height + height_band] and
    radius * [1 - radius_band, 1 + radius_band], so the views are genuinely
    novel rather than re-samples of the training ring.
    """
    rng = np.random.default_rng(seed)
    K = core.simple_intrinsics(width, height_px, fov_deg)
    cams = []
    for _ in range(count):
        a = rng.uniform(0.0, 2.0 * np.pi)
        h = height + (rng.uniform(-height_band, height_band) if height_band else 0.0)
        r = radius * (1.0 + (rng.uniform(-radius_band, radius_band) if radius_band else 0.0))
        eye = np.asarray([r * np.cos(a), r * np.sin(a), h])
        cams.append(core.look_at_pose(eye, [0, 0, 0], [0, 0, 1], K, width, height_px))
    return cams


def nearest_view_vertex_colors(mesh, raw_dataset, camera, diffuse):
    """Baseline: each vertex takes the color of its angularly closest raw
    sample; vertices without samples fall back to their diffuse color."""
    if raw_dataset.direction_space != core.RAW_SPACE or raw_dataset.residual:
        raise core.ValidationError("nearest-view baseline needs the raw capture")
    colors = np.clip(np.asarray(diffuse, dtype=np.float64), 0.0, 1.0).copy()
    order = np.argsort(raw_dataset.vertex_ids, kind="stable")
    vids = raw_dataset.vertex_ids[order]
    dirs = raw_dataset.directions[order]
    rgb = raw_dataset.rgb[order]
    starts = np.searchsorted(vids, np.arange(mesh.vertex_count))
    ends = np.searchsorted(vids, np.arange(mesh.vertex_count), side="right")
    d = camera.center[None, :] - mesh.positions
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    for v in range(mesh.vertex_count):
        s, e = starts[v], ends[v]
        if s == e:
            continue
        best = s + int(np.argmax(dirs[s:e] @ d[v]))
        colors[v] = np.clip(rgb[best], 0.0, 1.0)
    return colors


def evaluate_views(scene, net, diffuse, raw_dataset, cameras,
                   methods=("dslf", "diffuse_only", "nearest_view")):
    """Render every held-out camera with each method and score it against
    the ground-truth rendering on effective pixels.

    Returns a list of row dicts (method, view, psnr_db, ssim).
    """
    mesh = scene.mesh
    rows = []
    for vi, cam in enumerate(cameras):
        gt = synth.render_scene(scene, cam)
        mask = gt.mask
        for method in methods:
            if method == "dslf":
                img = renderer.render_frame(mesh, net, diffuse, cam)
            elif method == "diffuse_only":
                img = renderer.render_vertex_colors(mesh, diffuse, cam)
            elif method == "nearest_view":
                colors = nearest_view_vertex_colors(mesh, raw_dataset, cam, diffuse)
                img = renderer.render_vertex_colors(mesh, colors, cam)
            else:
                raise core.ValidationError(f"unknown method {method!r}")
            rows.append({
                "method": method,
                "view": vi,
                "psnr_db": psnr(img.pixels, gt.pixels, mask),
                "ssim": ssim(img.pixels, gt.pixels, mask),
            })
    return rows


def summarize(rows):
    """Per-method mean PSNR/SSIM (infinite PSNR folded in as the max finite
    value observed, so an exact method cannot lower its own mean)."""
    out = {}
    for method in sorted({r["method"] for r in rows}):
        ps = [r["psnr_db"] for r in rows if r["method"] == method]
        ss = [r["ssim"] for r in rows if r["method"] == method]
        finite = [p for p in ps if math.isfinite(p)]
        cap = max(finite) if finite else math.inf
        ps = [p if math.isfinite(p) else cap for p in ps]
        out[method] = {"psnr_db": float(np.mean(ps)), "ssim": float(np.mean(ss)),
                       "views": len(ps)}
    return out


def write_results_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "view", "psnr_db", "ssim"])
        writer.writeheader()
        for r in rows:
            writer.writerow(r)


def write_summary_json(summary, path, extra=None):
    doc = {"methods": summary}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
