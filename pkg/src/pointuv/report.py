"""Figures for evaluation reports, rendered headless to PNG files.

PNG metadata is stripped so the same inputs give byte-identical files.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import texture_to_uint8  # noqa: E402

_SAVE = dict(dpi=100, metadata={"Software": None})


def _finish(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def texture_grid(textures, path, titles=None, cols: int = 5) -> None:
    """Tile (C, H, W) textures in [-1, 1] into one figure."""
    n = len(textures)
    cols = max(1, min(cols, n))
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2 * cols, 2 * rows), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k < n:
            ax.imshow(texture_to_uint8(textures[k]), interpolation="nearest")
            if titles is not None:
                ax.set_title(str(titles[k]), fontsize=8)
    fig.tight_layout()
    _finish(fig, path)


def loss_curves(losses: dict, path, smooth: int = 50) -> None:
    """Training losses with a trailing moving average, log-scaled."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, vals in losses.items():
        v = np.asarray(vals, dtype=np.float64)
        if v.size == 0:
            continue
        w = max(1, min(smooth, v.size))
        avg = np.convolve(v, np.ones(w) / w, mode="valid")
        ax.plot(np.arange(w - 1, v.size), avg, label=name, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _finish(fig, path)


def color_histograms(pred, gt, mask, path, bins: int = 32) -> None:
    """Per-channel colour histograms of prediction and reference on the mask."""
    m = np.asarray(mask) > 0.5
    edges = np.linspace(-1.0, 1.0, bins + 1)
    fig, axes = plt.subplots(1, 3, figsize=(9, 2.6), sharey=True)
    for c, (ax, name) in enumerate(zip(axes, "RGB")):
        ax.hist(np.clip(gt[c][m], -1, 1), edges, histtype="step", label="reference", color="k")
        ax.hist(np.clip(pred[c][m], -1, 1), edges, histtype="step", label="generated", color="C3")
        ax.set_title(name, fontsize=9)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    _finish(fig, path)


def comparison_bars(metrics: dict, path) -> None:
    """Grouped bars of per-preset metrics, ``{preset: {metric: value}}``."""
    presets = list(metrics)
    names = sorted({k for v in metrics.values() for k in v})
    fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3), squeeze=False)
    for ax, name in zip(axes.flat, names):
        vals = [metrics[p].get(name, np.nan) for p in presets]
        ax.bar(range(len(presets)), vals, color=[f"C{i}" for i in range(len(presets))])
        ax.set_xticks(range(len(presets)), presets, rotation=45, ha="right", fontsize=7)
        ax.set_title(name, fontsize=9)
    fig.tight_layout()
    _finish(fig, path)
