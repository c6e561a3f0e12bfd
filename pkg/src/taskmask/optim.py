"""SGD with momentum, gradient gating, and the two learning-rate schedules."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


class SGD:
    """v <- m*v + g; w <- w - lr*v, per parameter.

    `gates` multiply both the incoming gradient and the updated momentum
    buffer, so a zero gate freezes a coordinate completely: its buffer can
    never go nonzero and the weight is bit-identical across any number of
    steps. Optimizer state is created fresh for each training stage.
    """

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9):
        self.momentum = momentum
        self.params = dict(params)
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: float, gates: dict[str, np.ndarray] | None = None):
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            gate = None if gates is None else gates.get(name)
            if gate is not None:
                g = g * gate
            v = self.velocity[name]
            v *= self.momentum
            v += g
            if gate is not None:
                v *= gate
            p.data -= (lr * v).astype(p.data.dtype, copy=False)
            p.grad = None


def scheduled_lr(epoch: int, base_lr: float, warmup_epochs: int, total_epochs: int,
                 peak_lr: float) -> float:
    """Linear ramp base->peak over the warmup epochs, then cosine decay to 0.

    The ramp reaches peak_lr at epoch warmup_epochs-1; the cosine phase spans
    the remaining epochs with no restart.
    """
    if warmup_epochs >= total_epochs:
        raise ValueError(f"warmup_epochs={warmup_epochs} must be < total_epochs={total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < warmup_epochs:
        if warmup_epochs <= 1:
            return peak_lr
        return base_lr + (peak_lr - base_lr) * epoch / (warmup_epochs - 1)
    span = total_epochs - warmup_epochs
    progress = (epoch - warmup_epochs) / span
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def milestone_lr(epoch: int, base_lr: float, total_epochs: int,
                 milestones=(0.6, 0.75, 0.9), factor: float = 0.1) -> float:
    """Step schedule: lr drops by `factor` at each fraction of total_epochs."""
    drops = sum(1 for frac in milestones if epoch >= math.floor(frac * total_epochs))
    return base_lr * factor ** drops
