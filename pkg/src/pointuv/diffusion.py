"""Forward process, posterior, losses and ancestral samplers.

Signals are plain arrays of any shape (``(C, K)`` point colors, ``(C, H, W)``
texture images, optionally with a leading batch axis).  The arithmetic helpers
only use operators, so they accept numpy arrays and torch tensors alike.

A denoiser is any callable ``denoiser(x_t, t, conditions) -> x0_hat`` returning
an array shaped like ``x_t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ContractError
from .schedule import NoiseSchedule

Denoiser = Callable[[np.ndarray, int, Mapping], np.ndarray]


@dataclass
class GaussianMoments:
    mean: np.ndarray
    var: float


def _same_shape(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        raise ContractError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def q_sample(schedule: NoiseSchedule, x0, t: int, eps, scale: float = 1.0):
    """Draw x_t ~ q(x_t | x_0) given the noise ``eps``.

    ``scale`` multiplies the clean signal before noising (input scaling); 1.0
    is the plain process.
    """
    t = schedule.check_t(t)
    _same_shape(x0, eps, "q_sample")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * (scale * x0) + math.sqrt(schedule.one_minus_alpha_bar[t]) * eps


def q_step(schedule: NoiseSchedule, x_prev, t: int, eps):
    """One forward kernel q(x_t | x_{t-1})."""
    t = schedule.check_t(t)
    _same_shape(x_prev, eps, "q_step")
    return math.sqrt(schedule.alpha[t]) * x_prev + math.sqrt(schedule.beta[t]) * eps


def posterior(schedule: NoiseSchedule, x0, xt, t: int) -> GaussianMoments:
    """Moments of q(x_{t-1} | x_t, x_0)."""
    t = schedule.check_t(t)
    _same_shape(x0, xt, "posterior")
    mean = schedule.post_coef_x0[t] * x0 + schedule.post_coef_xt[t] * xt
    return GaussianMoments(mean, float(schedule.beta_tilde[t]))


def reverse_step(schedule: NoiseSchedule, xt, t: int, x0_hat, z):
    """x_{t-1} from the x0-parameterised reverse kernel, with noise ``z``."""
    t = schedule.check_t(t)
    _same_shape(xt, x0_hat, "reverse_step")
    out = schedule.post_coef_x0[t] * x0_hat + schedule.post_coef_xt[t] * xt
    sigma = math.sqrt(schedule.sigma_sq[t])
    if z is not None and sigma > 0.0:
        _same_shape(xt, z, "reverse_step")
        out = out + sigma * z
    return out


def _sample_loop(schedule, denoiser, conditions_at, shape, rng_seed, clip, scale):
    rng = np.random.default_rng(rng_seed)
    x = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        x0_hat = np.asarray(denoiser(x, t, conditions_at(t)), dtype=np.float64)
        if x0_hat.shape != x.shape:
            raise ContractError(f"denoiser returned shape {x0_hat.shape}, expected {x.shape}")
        if clip is not None:
            x0_hat = np.clip(x0_hat, -clip, clip)
        z = rng.standard_normal(shape) if t > 1 else None
        x = reverse_step(schedule, x, t, scale * x0_hat, z)
    return x / scale if scale != 1.0 else x


def ancestral_sample(schedule: NoiseSchedule, denoiser: Denoiser, conditions, shape,
                     rng_seed, clip: float | None = 1.0, scale: float = 1.0) -> np.ndarray:
    """Run the reverse chain from x_T ~ N(0, I) down to x_0.

    The denoiser output is clamped to ``[-clip, clip]`` before each step;
    pass ``clip=None`` for unbounded data.  The result is a pure function of
    the inputs and ``rng_seed``.
    """
    return _sample_loop(schedule, denoiser, lambda t: conditions, tuple(shape), rng_seed,
                        clip, scale)


def truncation_steps(T: int, t_c: float) -> int:
    """Number of leading reverse steps (t = T, T-1, ...) that keep the droppable block."""
    if not 0.0 <= t_c <= 1.0:
        raise ContractError(f"t_c must lie in [0, 1], got {t_c}")
    # tolerance keeps e.g. 0.7 * 10 from rounding up to 8
    return min(T, max(0, math.ceil(t_c * T - 1e-9)))


def truncated_conditional_sample(schedule: NoiseSchedule, denoiser: Denoiser,
                                 base_conditions: Mapping, droppable_condition: Mapping,
                                 t_c: float, shape, seed, clip: float | None = 1.0,
                                 scale: float = 1.0) -> np.ndarray:
    """Ancestral sampling where ``droppable_condition`` is zeroed after the
    first ``ceil(t_c * T)`` reverse steps."""
    n_keep = truncation_steps(schedule.T, t_c)
    with_drop = {**base_conditions, **droppable_condition}
    without = {**base_conditions,
               **{k: np.zeros_like(v) for k, v in droppable_condition.items()}}

    def conditions_at(t):
        return with_drop if t > schedule.T - n_keep else without

    return _sample_loop(schedule, denoiser, conditions_at, tuple(shape), seed, clip, scale)


def mse(a, b, mask=None):
    """Mean squared error; with ``mask`` (broadcastable to ``a``) only masked
    entries count."""
    d = (a - b) ** 2
    if mask is None:
        return d.mean()
    w = mask * (d * 0 + 1)
    return (d * mask).sum() / w.sum()


def loss_simple(schedule: NoiseSchedule, denoiser_eps, x0, t: int, eps, conditions=None):
    xt = q_sample(schedule, x0, t, eps)
    return mse(eps, denoiser_eps(xt, t, conditions))


def loss_x0(schedule: NoiseSchedule, denoiser, x0, t: int, eps, conditions=None,
            mask=None, scale: float = 1.0):
    xt = q_sample(schedule, x0, t, eps, scale)
    return mse(x0, denoiser(xt, t, conditions), mask)


def gaussian_kl(mean1, var1, mean2, var2):
    """KL(N(mean1, var1 I) || N(mean2, var2 I)) summed over all elements."""
    mean1 = np.asarray(mean1, dtype=np.float64)
    mean2 = np.asarray(mean2, dtype=np.float64)
    n = mean1.size
    if var1 == var2:
        return float(0.5 * np.sum((mean1 - mean2) ** 2) / var2)
    return float(0.5 * (n * (var1 / var2 - 1.0 + math.log(var2 / var1))
                        + np.sum((mean1 - mean2) ** 2) / var2))


@dataclass
class ElboTerms:
    """Variational bound terms in nats per dimension."""
    L_T: float
    L_prev: np.ndarray  # index i holds L_{t-1} for t = i + 2
    L_0: float
    exact_match: bool | None = None

    @property
    def total(self) -> float:
        return float(self.L_T + self.L_prev.sum() + self.L_0)


def elbo_terms(schedule: NoiseSchedule, denoiser: Denoiser, x0, rng: np.random.Generator,
               conditions=None) -> ElboTerms:
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.size
    T = schedule.T
    ab = schedule.alpha_bar[T]
    L_T = gaussian_kl(math.sqrt(ab) * x0, schedule.one_minus_alpha_bar[T], np.zeros_like(x0), 1.0)

    L_prev = np.zeros(max(T - 1, 0))
    for t in range(2, T + 1):
        xt = q_sample(schedule, x0, t, rng.standard_normal(x0.shape))
        x0_hat = np.asarray(denoiser(xt, t, conditions), dtype=np.float64)
        true = posterior(schedule, x0, xt, t)
        model_mean = posterior(schedule, x0_hat, xt, t).mean
        L_prev[t - 2] = gaussian_kl(true.mean, true.var, model_mean, schedule.sigma_sq[t]) / n

    x1 = q_sample(schedule, x0, 1, rng.standard_normal(x0.shape))
    x0_hat = np.asarray(denoiser(x1, 1, conditions), dtype=np.float64)
    mean = posterior(schedule, x0_hat, x1, 1).mean
    var1 = schedule.sigma_sq[1]
    exact = None
    if var1 == 0.0:
        exact = bool(np.array_equal(mean, x0))
        L_0 = 0.0 if exact else math.inf
    else:
        L_0 = float(0.5 * np.sum((x0 - mean) ** 2) / var1 / n + 0.5 * math.log(2 * math.pi * var1))
    return ElboTerms(L_T / n, L_prev, L_0, exact)
