"""Fine stage: UV-space diffusion with hybrid conditions, the rendering loss
and condition-truncated sampling."""
from __future__ import annotations

import numpy as np
import torch

from ..diffusion import mse, truncated_conditional_sample
from ..errors import ContractError
from ..geometry import ShapeMapStack, farthest_point_sample, knn_fill, render_l1_and_grad, smooth_map, texel_points
from ..nets import FineDenoiser, UVDenoiser
from ..schedule import from_config
from .config import PipelineConfig
from .training import TrainResult, run_steps, seed_everything


def simulate_coarse(maps: ShapeMapStack, texture: np.ndarray, K: int, seed) -> np.ndarray:
    """Coarse texture image built from ``K`` FPS texels of a ground-truth texture."""
    pool = texel_points(maps)
    pool.colors = texture.reshape(3, -1)[:, pool.texel].T
    picked = farthest_point_sample(pool, min(K, len(pool)), seed)
    return knn_fill(picked, maps, k=min(3, len(picked)))


def build_hybrid_condition(x_coarse, x_smooth, p_hybrid: float, rng: np.random.Generator):
    """Six-channel block: smooth map, then the coarse map with probability
    ``p_hybrid`` (zeros otherwise).  Returns ``(block, included)``."""
    if not 0.0 <= p_hybrid <= 1.0:
        raise ContractError(f"p_hybrid must lie in [0, 1], got {p_hybrid}")
    x_coarse, x_smooth = np.asarray(x_coarse), np.asarray(x_smooth)
    if x_coarse.shape != x_smooth.shape:
        raise ContractError(f"coarse {x_coarse.shape} and smooth {x_smooth.shape} maps differ in shape")
    included = bool(rng.random() < p_hybrid)
    second = x_coarse if included else np.zeros_like(x_coarse)
    return np.concatenate([x_smooth, second], axis=0), included


def fine_loss(pred, x0, mask, views, render_weight: float, crop: int, rng):
    """Masked x0 loss plus the rendering L1 loss.

    ``pred`` is a (B, 3, H, W) tensor already multiplied by the mask.  The
    rendering term enters the objective through the surrogate
    ``sum(pred * dL/dpred)`` whose gradient equals the rendering-loss gradient.
    Returns ``(objective, logged_value)``.
    """
    basic = mse(pred, x0, mask)
    if render_weight == 0.0:
        return basic, basic.item()
    B = pred.shape[0]
    pred_np = pred.detach().cpu().double().numpy()
    x0_np = x0.detach().cpu().double().numpy()
    losses, grads = [], []
    for b in range(B):
        l, g = render_l1_and_grad(views[b], pred_np[b], x0_np[b], crop, rng)
        losses.append(l)
        grads.append(g)
    g = torch.as_tensor(np.stack(grads) / B, dtype=pred.dtype)
    surrogate = (pred * g).sum()
    return basic + render_weight * surrogate, basic.item() + render_weight * float(np.mean(losses))


def build_fine_net(cfg: PipelineConfig) -> UVDenoiser:
    return UVDenoiser(cfg.fine_channels, cfg.fine.emb_dim)


def train_fine(items, cfg: PipelineConfig, seed: int | None = None) -> TrainResult:
    """Train the UV denoiser on ground-truth textures.

    Coarse conditions are simulated from each texture (FPS over texels, then
    KNN fill), ``coarse_variants`` per item, precomputed once.
    """
    if not items:
        raise ContractError("cannot train on an empty dataset")
    f = cfg.fine
    seed = cfg.train.seed if seed is None else seed
    rng = seed_everything(seed, cfg.train.threads)
    model = build_fine_net(cfg)
    sched = from_config(cfg.diffusion)
    b = cfg.diffusion.noise_scale
    H = W = cfg.data.resolution
    for it in items:
        if it.maps.H != H or it.maps.W != W:
            raise ContractError(f"{it.name}: maps are {it.maps.H}x{it.maps.W}, config expects {H}x{W}")
        if f.render_weight and not it.views:
            raise ContractError(f"{it.name}: rendering loss needs view rasters")

    mask_np = np.stack([it.maps.mask[None] for it in items])
    x0_all = torch.tensor(np.stack([it.texture for it in items]) * mask_np, dtype=torch.float32)
    mask_all = torch.tensor(mask_np, dtype=torch.float32)
    xs_all = torch.tensor(np.stack([it.maps.x_shape() for it in items]), dtype=torch.float32)
    V = max(1, f.coarse_variants)
    coarse = np.zeros((len(items), V, 3, H, W))
    smooth = np.zeros_like(coarse)
    if f.use_coarse or f.use_smooth:
        for i, it in enumerate(items):
            for v in range(V):
                coarse[i, v] = simulate_coarse(it.maps, it.texture, cfg.data.points, [seed, i, v])
                smooth[i, v] = smooth_map(it.maps, coarse[i, v])
    sab = torch.tensor(np.sqrt(sched.alpha_bar), dtype=torch.float32)
    somab = torch.tensor(np.sqrt(sched.one_minus_alpha_bar), dtype=torch.float32)
    B = f.batch
    counters = {"hybrid_draws": 0, "hybrid_included": 0}

    def batch_loss(step):
        idx = rng.integers(len(items), size=B)
        var = rng.integers(V, size=B)
        t = torch.as_tensor(rng.integers(1, sched.T + 1, size=B))
        eps = torch.as_tensor(rng.standard_normal((B, 3, H, W)), dtype=torch.float32)
        blocks = []
        for i, v in zip(idx, var):
            block, inc = build_hybrid_condition(coarse[i, v], smooth[i, v], f.p_hybrid, rng)
            counters["hybrid_draws"] += 1
            counters["hybrid_included"] += int(inc)
            if not f.use_smooth:
                block[:3] = 0.0
            if not f.use_coarse:
                block[3:] = 0.0
            blocks.append(block)
        cond = torch.tensor(np.stack(blocks), dtype=torch.float32)
        ti = torch.as_tensor(idx)
        x0, mask = x0_all[ti], mask_all[ti]
        x_t = sab[t][:, None, None, None] * (b * x0) + somab[t][:, None, None, None] * eps
        pred = model(x_t, xs_all[ti], cond[:, 3:], cond[:, :3], t) * mask
        return fine_loss(pred, x0, mask, [items[i].views for i in idx], f.render_weight, f.crop, rng)

    result = run_steps(model, cfg, f.steps, f.lr, batch_loss, "fine")
    result.counters.update(counters)
    return result


def fine_meta(cfg: PipelineConfig) -> dict:
    """Settings a fine checkpoint must carry so sampling matches training."""
    return {"resolution": cfg.data.resolution, "use_coarse": cfg.fine.use_coarse,
            "use_smooth": cfg.fine.use_smooth, "p_hybrid": cfg.fine.p_hybrid}


def sample_fine(model: UVDenoiser, maps: ShapeMapStack, x_coarse, t_c: float, seed,
                cfg: PipelineConfig, use_coarse: bool | None = None,
                use_smooth: bool | None = None) -> np.ndarray:
    """Condition-truncated sampling of the texture.

    ``x_coarse`` is (3, H, W) or a batch (B, 3, H, W); the batch shares one
    noise stream drawn from ``seed``.  Texels off the mask are exactly zero.
    """
    use_coarse = cfg.fine.use_coarse if use_coarse is None else use_coarse
    use_smooth = cfg.fine.use_smooth if use_smooth is None else use_smooth
    x_coarse = np.asarray(x_coarse, dtype=np.float64)
    if x_coarse.shape[-2:] != (maps.H, maps.W):
        raise ContractError(f"coarse map {x_coarse.shape[-2:]} does not match maps {maps.H}x{maps.W}")
    batched = x_coarse.ndim == 4
    xc = x_coarse if batched else x_coarse[None]
    if use_smooth:
        xsm = np.stack([smooth_map(maps, c) for c in xc])
    else:
        xsm = np.zeros_like(xc)
    if not use_coarse:
        xc = np.zeros_like(xc)
    sched = from_config(cfg.diffusion)
    base = {"x_shape": maps.x_shape(), "x_smooth": xsm}
    clip = cfg.diffusion.clip if cfg.diffusion.clip > 0 else None
    out = truncated_conditional_sample(sched, FineDenoiser(model), base, {"x_coarse": xc}, t_c,
                                       xc.shape, seed, clip, cfg.diffusion.noise_scale)
    out = out * maps.mask
    return out if batched else out[0]
