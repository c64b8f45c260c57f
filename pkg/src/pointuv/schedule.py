"""Per-timestep coefficients of the diffusion process.

Arrays are stored with length ``T + 1`` so that ``beta[t]`` addresses step ``t``
directly.  Index 0 is padding except for ``alpha_bar[0] == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SIGMA_MODES = ("beta", "beta_tilde")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    one_minus_alpha_bar: np.ndarray
    sigma_sq: np.ndarray
    post_coef_x0: np.ndarray
    post_coef_xt: np.ndarray
    beta_tilde: np.ndarray
    sigma_mode: str = "beta"
    kind: str = "linear"

    @property
    def sqrt_alpha_bar(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma_sq)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")
        return t


def _from_betas(beta_1T: np.ndarray, sigma_mode: str, kind: str) -> NoiseSchedule:
    if sigma_mode not in SIGMA_MODES:
        raise ConfigError(f"sigma_mode must be one of {SIGMA_MODES}, got {sigma_mode!r}")
    beta_1T = np.asarray(beta_1T, dtype=np.float64)
    T = beta_1T.size
    beta = np.concatenate([[0.0], beta_1T])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # 1 - alpha_bar via the all-positive recurrence b_t + a_t (1 - abar_{t-1});
    # avoids cancellation for small t and gives 1 - abar_1 == beta_1 exactly.
    omab = np.zeros(T + 1)
    for t in range(1, T + 1):
        omab[t] = beta[t] + alpha[t] * omab[t - 1]

    post_x0 = np.zeros(T + 1)
    post_xt = np.zeros(T + 1)
    beta_tilde = np.zeros(T + 1)
    t = np.arange(1, T + 1)
    post_x0[1:] = np.sqrt(alpha_bar[t - 1]) * beta[t] / omab[t]
    post_xt[1:] = np.sqrt(alpha[t]) * omab[t - 1] / omab[t]
    beta_tilde[1:] = omab[t - 1] / omab[t] * beta[t]
    post_x0[0] = 1.0

    sigma_sq = beta.copy() if sigma_mode == "beta" else beta_tilde.copy()
    for arr in (beta, alpha, alpha_bar, omab, sigma_sq, post_x0, post_xt, beta_tilde):
        arr.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar, omab, sigma_sq, post_x0, post_xt,
                         beta_tilde, sigma_mode, kind)


def build_linear(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                 sigma_mode: str = "beta") -> NoiseSchedule:
    """Linearly increasing forward variances from ``beta_start`` to ``beta_end``."""
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
        betas[-1] = beta_end
    return _from_betas(betas, sigma_mode, "linear")


def cosine_alpha_bar_fn(offset: float):
    def g(u):
        return np.cos((np.asarray(u, dtype=np.float64) + offset) / (1.0 + offset) * math.pi / 2) ** 2
    return g


def build_cosine(T: int, offset: float = 0.008, sigma_mode: str = "beta",
                 max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine schedule: abar_t = g(t/T) / g(0), betas clipped at ``max_beta``.

    ``alpha_bar`` is re-accumulated from the clipped betas, so it equals the
    closed form everywhere except after a clipped step (normally only t = T).
    """
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if offset <= 0:
        raise ConfigError(f"cosine offset must be positive, got {offset}")
    g = cosine_alpha_bar_fn(offset)
    ab = g(np.arange(T + 1) / T) / g(0.0)
    betas = np.minimum(1.0 - ab[1:] / ab[:-1], max_beta)
    return _from_betas(betas, sigma_mode, "cosine")


def from_config(cfg) -> NoiseSchedule:
    """Build from a :class:`pointuv.pipeline.config.DiffusionConfig`-like object."""
    if cfg.schedule == "linear":
        return build_linear(cfg.T, cfg.beta_start, cfg.beta_end, cfg.sigma_mode)
    if cfg.schedule == "cosine":
        return build_cosine(cfg.T, cfg.cosine_offset, cfg.sigma_mode)
    raise ConfigError(f"unknown schedule {cfg.schedule!r} (expected linear or cosine)")
