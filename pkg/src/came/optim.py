"""Adam with decoupled weight decay and a linear learning-rate decay schedule.

The schedule is measured in optimizer steps: the effective rate falls
linearly from the base rate to decay_floor * base over total_steps, then
stays at the floor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    lr: float
    total_steps: int
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_floor: float = 0.1
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def moments_for(self, params: dict) -> None:
        """Allocate zero moments matching any parameters not yet tracked."""
        for name, arr in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)


def effective_lr(state: AdamWState, position: int | None = None) -> float:
    """Learning rate at a 0-based step position (defaults to state.step)."""
    t = state.step if position is None else position
    frac = min(t, state.total_steps) / max(state.total_steps, 1)
    return state.lr * (1.0 - (1.0 - state.decay_floor) * frac)


def optimizer_step(state: AdamWState, params: dict, grads: dict) -> bool:
    """Apply one update in place. Returns False (step skipped) on bad grads."""
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            warnings.warn(
                f"non-finite gradient for {name!r}; optimizer step skipped",
                RuntimeWarning,
                stacklevel=2,
            )
            return False
    state.moments_for(params)
    lr_t = effective_lr(state)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= lr_t * update
    return True
