"""Coarse stage: point-colour diffusion conditioned on shape and style."""
from __future__ import annotations

import numpy as np
import torch

from ..diffusion import ancestral_sample
from ..errors import ContractError
from ..geometry import ShapeMapStack, SurfacePointSet, knn_fill
from ..nets import CoarseDenoiser, CoarseNet
from ..schedule import from_config
from .config import PipelineConfig
from .training import TrainResult, run_steps, seed_everything


def _clip_value(cfg):
    return cfg.diffusion.clip if cfg.diffusion.clip > 0 else None


def n_styles_of(items, cfg: PipelineConfig) -> int:
    if not cfg.style.enabled:
        return 0
    labels = [it.style for it in items]
    if min(labels) < 0:
        raise ContractError("style guidance is enabled but some items carry no style label")
    return max(labels) + 1


def build_coarse_net(cfg: PipelineConfig, n_styles: int) -> CoarseNet:
    c = cfg.coarse
    return CoarseNet(c.hidden, c.emb_dim, n_styles, c.encoder_width)


def train_coarse(items, cfg: PipelineConfig, seed: int | None = None,
                 n_styles: int | None = None) -> TrainResult:
    """Minimise the x0-prediction loss on point colours.

    Each step draws a batch of items, ``t ~ Uniform{1..T}`` per item and
    Gaussian noise; all randomness comes from ``seed``.
    """
    if not items:
        raise ContractError("cannot train on an empty dataset")
    seed = cfg.train.seed if seed is None else seed
    rng = seed_everything(seed, cfg.train.threads)
    n_styles = n_styles_of(items, cfg) if n_styles is None else n_styles
    model = build_coarse_net(cfg, n_styles)
    sched = from_config(cfg.diffusion)
    b = cfg.diffusion.noise_scale

    z0 = torch.tensor(np.stack([it.z0 for it in items]), dtype=torch.float32)
    zc = torch.tensor(np.stack([it.points.z_coord for it in items]), dtype=torch.float32)
    xs = torch.tensor(np.stack([it.maps.x_shape() for it in items]), dtype=torch.float32)
    styles = torch.tensor([max(it.style, 0) for it in items], dtype=torch.long)
    sab = torch.tensor(np.sqrt(sched.alpha_bar), dtype=torch.float32)
    somab = torch.tensor(np.sqrt(sched.one_minus_alpha_bar), dtype=torch.float32)
    B = cfg.coarse.batch

    def batch_loss(step):
        idx = torch.as_tensor(rng.integers(len(items), size=B))
        t = torch.as_tensor(rng.integers(1, sched.T + 1, size=B))
        eps = torch.as_tensor(rng.standard_normal((B,) + tuple(z0.shape[1:])), dtype=torch.float32)
        x0 = z0[idx]
        z_t = sab[t][:, None, None] * (b * x0) + somab[t][:, None, None] * eps
        pred = model(z_t, zc[idx], xs[idx], t, styles[idx] if n_styles else None)
        loss = ((pred - x0) ** 2).mean()
        return loss, loss.item()

    return run_steps(model, cfg, cfg.coarse.steps, cfg.coarse.lr, batch_loss, "coarse")


def pick_style(model: CoarseNet, style, seed) -> int | None:
    """Requested label, or a uniform draw from the model's labels when None."""
    k = model.config["n_styles"]
    if k == 0:
        if style is not None:
            raise ContractError("this coarse model was trained without style labels")
        return None
    if style is None:
        return int(np.random.default_rng([int(seed), 1]).integers(k))
    if not 0 <= int(style) < k:
        raise ContractError(f"style {style} out of range [0, {k})")
    return int(style)


def sample_coarse(model: CoarseNet, maps: ShapeMapStack, points: SurfacePointSet, style, seed,
                  cfg: PipelineConfig):
    """Sample point colours, clamp them, and fill the UV image from them.

    Returns ``(x_coarse, colored_points)``; ``x_coarse`` is zero off the mask.
    """
    sched = from_config(cfg.diffusion)
    label = pick_style(model, style, seed)
    den = CoarseDenoiser(model, maps.x_shape(), points.z_coord, label)
    z = ancestral_sample(sched, den, None, (3, len(points)), seed, _clip_value(cfg),
                         cfg.diffusion.noise_scale)
    colored = points.subset(np.arange(len(points)))
    colored.colors = np.clip(z, -1.0, 1.0).T
    return knn_fill(colored, maps, k=3), colored
