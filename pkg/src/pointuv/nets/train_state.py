"""AdamW with decoupled weight decay, cyclic cosine learning rate and an EMA
shadow of the parameters."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch

log = logging.getLogger(__name__)


def cyclic_cosine_lr(step: int, lr_base: float, cycle: int, floor: float = 0.01) -> float:
    """Cosine decay from ``lr_base`` to ``floor * lr_base`` over ``cycle`` steps, restarting."""
    if cycle <= 0:
        return lr_base
    lo = floor * lr_base
    phase = (step % cycle) / cycle
    return lo + 0.5 * (lr_base - lo) * (1.0 + math.cos(math.pi * phase))


def clip_grad_norm(grads, max_norm: float):
    """Rescale ``grads`` in place so their joint 2-norm is at most ``max_norm``.

    Returns the norm before clipping; ``max_norm <= 0`` only measures.
    Non-finite norms are left for :func:`optimizer_step` to reject.
    """
    norms = torch._foreach_norm(grads)
    total = float(torch.linalg.vector_norm(torch.stack(norms)))
    if max_norm > 0 and math.isfinite(total) and total > max_norm:
        torch._foreach_mul_(grads, max_norm / (total + 1e-12))
    return total


@dataclass
class TrainState:
    params: list
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    ema: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    ema_decay: float = 0.9995
    ema_warmup: bool = True
    lr_cycle: int = 1000
    lr_floor: float = 0.01
    rejected: int = 0

    def __post_init__(self):
        self.params = list(self.params)
        with torch.no_grad():
            if not self.m:
                self.m = [torch.zeros_like(p) for p in self.params]
            if not self.v:
                self.v = [torch.zeros_like(p) for p in self.params]
            if not self.ema:
                self.ema = [p.detach().clone() for p in self.params]

    def current_decay(self) -> float:
        if not self.ema_warmup:
            return self.ema_decay
        # short runs would otherwise keep the EMA pinned near the initial weights
        return min(self.ema_decay, (1.0 + self.step) / (10.0 + self.step))

    def swap_ema(self):
        """Exchange live and EMA weights in place (call twice to restore)."""
        with torch.no_grad():
            for p, e in zip(self.params, self.ema):
                tmp = p.detach().clone()
                p.copy_(e)
                e.copy_(tmp)


def optimizer_step(state: TrainState, grads, lr_base: float) -> bool:
    """Apply one AdamW update and refresh the EMA.

    Returns False (and leaves the state untouched) when any gradient is
    non-finite.
    """
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(state.params, grads)]
    norms = torch._foreach_norm(grads)
    if not bool(torch.isfinite(torch.stack(norms)).all()):
        state.rejected += 1
        log.warning("non-finite gradient at step %d; update skipped", state.step)
        return False
    lr = cyclic_cosine_lr(state.step, lr_base, state.lr_cycle, state.lr_floor)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    params = state.params
    with torch.no_grad():
        if state.weight_decay:
            torch._foreach_mul_(params, 1.0 - lr * state.weight_decay)
        torch._foreach_mul_(state.m, b1)
        torch._foreach_add_(state.m, grads, alpha=1.0 - b1)
        torch._foreach_mul_(state.v, b2)
        torch._foreach_addcmul_(state.v, grads, grads, value=1.0 - b2)
        denom = torch._foreach_div(state.v, bc2)
        torch._foreach_sqrt_(denom)
        torch._foreach_add_(denom, state.eps)
        torch._foreach_addcdiv_(params, state.m, denom, value=-lr / bc1)
        d = state.current_decay()
        # e += (1 - d) * (p - e)
        torch._foreach_lerp_(state.ema, params, 1.0 - d)
    return True
