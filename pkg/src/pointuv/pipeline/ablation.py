"""Desk-scale ablation: the full pipeline against its named presets.

For one training seed this trains a style-guided and an unguided coarse
model plus a fine model with and without the coarse-stage conditions, then
samples the same evaluation set under every configuration.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..evalkit import gradient_energy, mean_gradient_magnitude, pairwise_diversity
from ..geometry import sample_points, seam_discrepancy
from .coarse import sample_coarse, train_coarse
from .config import PRESETS, PipelineConfig
from .fine import sample_fine, train_fine

log = logging.getLogger(__name__)

EVAL_PRESETS = ("full", "no_coarse_stage", "no_fine_stage", "no_style")


@dataclass
class SeedOutcome:
    seed: int
    metrics: dict                          # preset -> {seam, grad_energy, diversity}
    textures: dict = field(repr=False)     # preset -> {shape: (n, 3, H, W)}
    losses: dict = field(default_factory=dict, repr=False)
    train_seconds: float = 0.0             # wall clock
    train_cpu_seconds: float = 0.0         # process CPU time (immune to VM pauses)


def eval_shapes(items):
    """One representative item per distinct shape, in first-seen order."""
    seen = {}
    for it in items:
        seen.setdefault(it.shape, it)
    return list(seen.values())


def run_seed(items, cfg: PipelineConfig, seed: int, n_per_shape: int = 5) -> SeedOutcome:
    cfg_plain = cfg.with_overrides(PRESETS["no_style"])
    cfg_nc = cfg.with_overrides(PRESETS["no_coarse_stage"])
    log.info("seed %d: training", seed)
    start, start_cpu = time.perf_counter(), time.process_time()
    coarse_s = train_coarse(items, cfg, seed)
    coarse_p = train_coarse(items, cfg_plain, seed, n_styles=0)
    fine_f = train_fine(items, cfg, seed)
    fine_nc = train_fine(items, cfg_nc, seed)
    train_seconds = time.perf_counter() - start
    train_cpu = time.process_time() - start_cpu
    m_cs, m_cp = coarse_s.ema_model(), coarse_p.ema_model()
    m_ff, m_fnc = fine_f.ema_model(), fine_nc.ema_model()
    k = m_cs.config["n_styles"]
    t_c = cfg.sample.t_c

    textures = {p: {} for p in EVAL_PRESETS}
    for si, ref in enumerate(eval_shapes(items)):
        maps = ref.maps
        xc_s, xc_p = [], []
        for j in range(n_per_shape):
            s = 100_000 * seed + 1000 * si + j
            pts = sample_points(ref.mesh, maps, cfg.data.points, s, cfg.data.oversample)
            label = j % k if k else None
            xc_s.append(sample_coarse(m_cs, maps, pts, label, s, cfg)[0])
            xc_p.append(sample_coarse(m_cp, maps, pts, None, s, cfg_plain)[0])
        xc_s, xc_p = np.stack(xc_s), np.stack(xc_p)
        fseed = 100_000 * seed + 1000 * si + 999
        textures["full"][ref.shape] = sample_fine(m_ff, maps, xc_s, t_c, fseed, cfg)
        textures["no_style"][ref.shape] = sample_fine(m_ff, maps, xc_p, t_c, fseed, cfg)
        textures["no_coarse_stage"][ref.shape] = sample_fine(m_fnc, maps, np.zeros_like(xc_s), t_c,
                                                             fseed, cfg_nc)
        textures["no_fine_stage"][ref.shape] = xc_s * maps.mask

    shapes = {it.shape: it for it in eval_shapes(items)}
    metrics = {}
    for preset, by_shape in textures.items():
        seams, energy, tv, div = [], [], [], []
        for name, batch in by_shape.items():
            ref = shapes[name]
            seams += [seam_discrepancy(ref.mesh, ref.maps, tex) for tex in batch]
            energy += [gradient_energy(tex, ref.maps.mask) for tex in batch]
            tv += [mean_gradient_magnitude(tex, ref.maps.mask) for tex in batch]
            div.append(pairwise_diversity(batch, ref.maps.mask))
        metrics[preset] = {"seam": float(np.mean(seams)), "grad_energy": float(np.mean(energy)),
                           "grad_magnitude": float(np.mean(tv)),
                           "diversity": float(np.mean(div))}
    losses = {"coarse_style": coarse_s.losses, "coarse_plain": coarse_p.losses,
              "fine_full": fine_f.losses, "fine_no_coarse": fine_nc.losses}
    return SeedOutcome(seed, metrics, textures, losses, train_seconds, train_cpu)


@dataclass
class Comparison:
    name: str
    diffs: np.ndarray          # per-seed (expected-larger minus expected-smaller)

    @property
    def gap(self) -> float:
        return float(self.diffs.mean())

    @property
    def stderr(self) -> float:
        n = len(self.diffs)
        return float(self.diffs.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")

    @property
    def holds(self) -> bool:
        return self.gap > 0 and self.gap > self.stderr


def compare(outcomes) -> list[Comparison]:
    """The three directional claims as per-seed differences (positive = holds)."""
    m = [o.metrics for o in outcomes]
    return [
        Comparison("seam: no_coarse_stage > full",
                   np.array([x["no_coarse_stage"]["seam"] - x["full"]["seam"] for x in m])),
        Comparison("grad_energy: full > no_fine_stage",
                   np.array([x["full"]["grad_energy"] - x["no_fine_stage"]["grad_energy"] for x in m])),
        Comparison("diversity: full (guided) > no_style",
                   np.array([x["full"]["diversity"] - x["no_style"]["diversity"] for x in m])),
    ]
