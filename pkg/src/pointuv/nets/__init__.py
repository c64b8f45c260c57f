"""Denoisers: the analytic Gaussian oracle, the trainable coarse/fine networks,
their numpy-facing wrappers and checkpoint I/O."""
from __future__ import annotations

import math

import numpy as np
import torch

from ..errors import ConfigError, ContainerError
from ..schedule import NoiseSchedule
from .point import CoarseNet, PointDenoiser, ShapeEncoder
from .train_state import TrainState, clip_grad_norm, cyclic_cosine_lr, optimizer_step
from .uv import IN_CHANNELS, UVDenoiser

__all__ = [
    "CoarseDenoiser", "CoarseNet", "FineDenoiser", "IN_CHANNELS", "PointDenoiser", "ShapeEncoder",
    "TrainState", "UVDenoiser", "clip_grad_norm", "cyclic_cosine_lr", "gaussian_oracle_denoiser", "load_checkpoint",
    "optimizer_step", "save_checkpoint",
]


def gaussian_oracle_denoiser(schedule: NoiseSchedule):
    """Exact E[x_0 | x_t] = sqrt(abar_t) x_t for x_0 ~ N(0, I)."""
    def denoise(x_t, t, conditions=None):
        return math.sqrt(schedule.alpha_bar[t]) * np.asarray(x_t)
    return denoise


def _dtype(model):
    return next(model.parameters()).dtype


def _tensor(x, dtype):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


class CoarseDenoiser:
    """Numpy callable around :class:`CoarseNet` for a fixed shape.

    ``z_coord`` is (6, K) or (B, 6, K); ``x_shape`` (7, H, W) or batched;
    ``style`` an int, a sequence of per-sample labels, or None.
    """

    def __init__(self, model: CoarseNet, x_shape, z_coord, style=None):
        self.model = model
        dt = _dtype(model)
        xs = _tensor(x_shape, dt)
        self.x_shape = xs[None] if xs.ndim == 3 else xs
        zc = _tensor(z_coord, dt)
        self.z_coord = zc[None] if zc.ndim == 2 else zc
        self.style = style
        with torch.no_grad():
            self.f_g = model.encoder(self.x_shape)

    def __call__(self, z_t, t, conditions=None):
        z = _tensor(z_t, _dtype(self.model))
        single = z.ndim == 2
        if single:
            z = z[None]
        B = z.shape[0]
        style = None if self.style is None else torch.as_tensor(self.style, dtype=torch.long)
        if style is not None and style.ndim == 0:
            style = style.expand(B)
        zc = self.z_coord.expand(B, -1, -1) if self.z_coord.shape[0] == 1 else self.z_coord
        fg = self.f_g.expand(B, -1) if self.f_g.shape[0] == 1 else self.f_g
        with torch.no_grad():
            out = self.model(z, zc, None, t, style, f_g=fg).numpy().astype(np.float64)
        return out[0] if single else out


class FineDenoiser:
    """Numpy callable around :class:`UVDenoiser`.

    ``conditions`` maps ``x_shape``, ``x_coarse`` and ``x_smooth`` to arrays
    (batched or not).  Predictions are multiplied by the mask channel so
    invalid texels follow the all-zero trajectory they are trained on.
    """

    def __init__(self, model: UVDenoiser):
        self.model = model

    def __call__(self, x_t, t, conditions):
        dt = _dtype(self.model)
        x = _tensor(x_t, dt)
        single = x.ndim == 3
        if single:
            x = x[None]
        B = x.shape[0]

        def block(name):
            a = _tensor(conditions[name], dt)
            a = a[None] if a.ndim == 3 else a
            return a.expand(B, -1, -1, -1) if a.shape[0] == 1 else a
        xs = block("x_shape")
        with torch.no_grad():
            out = self.model(x, xs, block("x_coarse"), block("x_smooth"), t)
            out = out * xs[:, 3:4]
        out = out.numpy().astype(np.float64)
        return out[0] if single else out


def save_checkpoint(path, model, state: TrainState | None, kind: str, meta: dict | None = None) -> None:
    from ..io import write_puvd
    planes = {}
    names = [n for n, _ in model.named_parameters()]
    for n, p in model.named_parameters():
        planes[f"param.{n}"] = p.detach().cpu().numpy()
    if state is not None:
        for n, e in zip(names, state.ema):
            planes[f"ema.{n}"] = e.detach().cpu().numpy()
    info = {"kind": kind, "arch": model.config, "step": 0 if state is None else state.step,
            "has_ema": state is not None, **(meta or {})}
    write_puvd(path, planes, info)


def load_checkpoint(path, use_ema: bool = True, dtype=torch.float32):
    """Return ``(model, meta)``; EMA weights are loaded when present and requested."""
    from ..io import read_puvd
    planes, meta, _ = read_puvd(path)
    kind = meta.get("kind")
    arch = meta.get("arch", {})
    if kind == "coarse":
        model = CoarseNet(**arch)
    elif kind == "fine":
        model = UVDenoiser(**arch)
    else:
        raise ConfigError(f"{path}: not a network checkpoint (kind={kind!r})")
    prefix = "ema." if use_ema and meta.get("has_ema") else "param."
    with torch.no_grad():
        for n, p in model.named_parameters():
            key = prefix + n
            if key not in planes:
                raise ContainerError(f"{path}: missing plane {key}")
            p.copy_(torch.from_numpy(planes[key]).reshape(p.shape))
    return model.to(dtype).eval(), meta
