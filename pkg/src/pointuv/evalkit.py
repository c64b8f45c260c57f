"""Texture metrics on the valid (mask = 1) texels.

Colours live in [-1, 1].  ``masked_psnr`` returns ``math.inf`` as the
sentinel for a perfect match.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError

COLOR_RANGE = 2.0


def _mask(mask, shape):
    m = np.asarray(mask) > 0.5
    if m.shape != tuple(shape[-2:]):
        raise ContractError(f"mask {m.shape} does not match texture {tuple(shape)}")
    if not m.any():
        raise ContractError("mask selects no texels")
    return m


def pairwise_diversity(textures, mask) -> float:
    """Mean over unordered pairs of the RMS colour difference on the mask."""
    tex = np.asarray(textures, dtype=np.float64)
    if tex.ndim != 4 or len(tex) < 2:
        raise ContractError("pairwise_diversity needs at least two (C, H, W) textures")
    m = _mask(mask, tex.shape)
    vals = tex[:, :, m]                                    # (N, C, V)
    d = [math.sqrt(np.mean((vals[i] - vals[j]) ** 2))
         for i, j in itertools.combinations(range(len(vals)), 2)]
    return float(np.mean(d))


def masked_psnr(pred, gt, mask) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"shape mismatch {pred.shape} vs {gt.shape}")
    m = _mask(mask, pred.shape)
    err = np.mean((pred[:, m] - gt[:, m]) ** 2)
    if err == 0.0:
        return math.inf
    return float(10.0 * math.log10(COLOR_RANGE ** 2 / err))


def histogram_emd(a, b, mask, bins: int = 32) -> float:
    """Per-channel 1-D earth mover's distance between colour histograms over
    [-1, 1] (L1 distance of the cumulative histograms times the bin width),
    averaged over channels."""
    if bins < 2:
        raise ContractError("histogram_emd needs at least two bins")
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    m = _mask(mask, a.shape)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    width = edges[1] - edges[0]
    out = []
    for ca, cb in zip(a[:, m], b[:, m]):
        ha = np.histogram(np.clip(ca, -1, 1), edges)[0] / ca.size
        hb = np.histogram(np.clip(cb, -1, 1), edges)[0] / cb.size
        out.append(np.abs(np.cumsum(ha - hb)).sum() * width)
    return float(np.mean(out))


def _adjacent_differences(texture, mask):
    tex = np.asarray(texture, dtype=np.float64)
    m = _mask(mask, tex.shape)
    h = m[:, 1:] & m[:, :-1]
    v = m[1:, :] & m[:-1, :]
    return np.concatenate([np.linalg.norm(tex[:, :, 1:] - tex[:, :, :-1], axis=0)[h],
                           np.linalg.norm(tex[:, 1:, :] - tex[:, :-1, :], axis=0)[v]])


def gradient_energy(texture, mask) -> float:
    """Mean squared colour difference over horizontally and vertically
    adjacent texel pairs that are both valid.

    Squaring matters: spreading a step edge over ``w`` texels keeps the summed
    magnitude but divides this energy by ``w``, so blur lowers it.
    """
    d = _adjacent_differences(texture, mask)
    return float(np.mean(d ** 2)) if d.size else 0.0


def mean_gradient_magnitude(texture, mask) -> float:
    """Unsquared companion of :func:`gradient_energy` (total variation per pair)."""
    d = _adjacent_differences(texture, mask)
    return float(d.mean()) if d.size else 0.0


@dataclass
class EvalReport:
    seam_discrepancy: float | None = None
    pairwise_diversity: float | None = None
    masked_psnr: float | None = None
    histogram_emd: float | None = None
    gradient_energy: float | None = None

    def items(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_kv(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.items().items())

    def to_json(self) -> str:
        clean = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v)
                 for k, v in self.items().items()}
        return json.dumps(clean, indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6f}"
    return str(v)
