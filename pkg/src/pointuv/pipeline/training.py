"""Training-loop plumbing shared by the coarse and fine stages."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import TrainingDiverged
from ..nets import TrainState, clip_grad_norm, optimizer_step
from .config import PipelineConfig

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: torch.nn.Module         # live weights
    state: TrainState
    kind: str
    losses: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def ema_model(self) -> torch.nn.Module:
        """Copy of the model carrying the EMA weights, in eval mode."""
        m = copy.deepcopy(self.model)
        with torch.no_grad():
            for p, e in zip(m.parameters(), self.state.ema):
                p.copy_(e)
        return m.eval()


def make_state(model, cfg: PipelineConfig, steps: int) -> TrainState:
    t = cfg.train
    return TrainState(list(model.parameters()), weight_decay=t.weight_decay, ema_decay=t.ema_decay,
                      ema_warmup=t.ema_warmup, lr_cycle=t.lr_cycle or max(steps, 1),
                      lr_floor=t.lr_floor)


def seed_everything(seed: int, threads: int = 1) -> np.random.Generator:
    torch.manual_seed(seed)
    torch.set_num_threads(max(1, int(threads)))
    return np.random.default_rng(seed)


class DivergenceMonitor:
    """Abort when the loss stays above ``factor`` times the first loss for
    ``patience`` consecutive steps."""

    def __init__(self, factor: float, patience: int):
        self.factor, self.patience = factor, patience
        self.initial = None
        self.run = 0

    def update(self, step: int, loss: float) -> None:
        if not np.isfinite(loss):
            self.run += 1
        elif self.initial is None:
            self.initial = loss
            return
        elif loss > self.factor * self.initial:
            self.run += 1
        else:
            self.run = 0
        if self.run >= self.patience:
            raise TrainingDiverged(
                f"loss above {self.factor:g}x the initial {self.initial:.4g} for {self.run} "
                f"consecutive steps (step {step}, last loss {loss:.4g})")


def run_steps(model, cfg: PipelineConfig, steps: int, lr: float, batch_loss, kind: str) -> TrainResult:
    """Generic loop: ``batch_loss(step)`` returns ``(objective, logged_loss)``.

    The objective is back-propagated; the logged value is what the history
    records (they differ when part of the loss uses a surrogate backward).
    """
    state = make_state(model, cfg, steps)
    monitor = DivergenceMonitor(cfg.train.diverge_factor, cfg.train.diverge_patience)
    result = TrainResult(model, state, kind)
    model.train()
    for step in range(steps):
        objective, logged = batch_loss(step)
        params = state.params
        grads = [torch.zeros_like(p) if g is None else g
                 for p, g in zip(params, torch.autograd.grad(objective, params, allow_unused=True))]
        clip_grad_norm(grads, cfg.train.grad_clip)
        optimizer_step(state, grads, lr)
        result.losses.append(float(logged))
        monitor.update(step, float(logged))
        if step % 250 == 0:
            log.info("%s step %d loss %.5f", kind, step, logged)
    result.counters["rejected_steps"] = state.rejected
    model.eval()
    return result
