"""Figure rendering for pipeline reports: loss curves, per-view metric
curves, and method summary bars, written as PNG files next to the CSV/JSON
tables."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(train_curve, holdout_curve, path, title="training loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(1, len(train_curve) + 1)
    ax.semilogy(epochs, train_curve, label="train KL", lw=1.5)
    if holdout_curve:
        ax.semilogy(np.arange(1, len(holdout_curve) + 1), holdout_curve,
                    label="holdout KL", lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("KL divergence")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_metric_curves(rows, path, metric="psnr_db"):
    """Per-viewpoint metric curves, one line per method."""
    methods = sorted({r["method"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    for m in methods:
        pts = sorted((r["view"], r[metric]) for r in rows if r["method"] == m)
        ys = [y if math.isfinite(y) else np.nan for _, y in pts]
        ax.plot([x for x, _ in pts], ys, marker="o", ms=3, lw=1.2, label=m)
    ax.set_xlabel("held-out viewpoint")
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} per held-out view")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_summary_bars(summary, path):
    methods = sorted(summary)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, key, label in ((axes[0], "psnr_db", "PSNR (dB)"),
                           (axes[1], "ssim", "SSIM")):
        vals = [summary[m][key] for m in methods]
        ax.bar(methods, vals, color="#4878a8")
        ax.set_ylabel(label)
        ax.set_title(label)
        ax.tick_params(axis="x", rotation=20)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_energy_trace(trace, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(len(trace)), trace, lw=1.2)
    ax.set_xlabel("accepted move")
    ax.set_ylabel("energy E")
    ax.set_title("superpixel hill-climb energy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
