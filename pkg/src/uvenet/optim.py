"""Adam and cosine-annealing learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .engine import Tensor


@dataclass
class AdamState:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update, in place.

    Parameters without a gradient are treated as having a zero gradient so
    that every moment buffer advances with the shared step counter.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.data.shape:
            raise ValueError(f"moment buffer for {name} has shape {m.shape}, parameter {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)


@dataclass(frozen=True)
class CosineSchedule:
    lr0: float = 4e-4
    t_max: int = 2000
    eta_min: float = 0.0


def cosine_lr(sched: CosineSchedule, t: int) -> float:
    t = min(max(t, 0), sched.t_max)
    if sched.t_max == 0:
        return sched.lr0
    return sched.eta_min + (sched.lr0 - sched.eta_min) * (1.0 + math.cos(math.pi * t / sched.t_max)) / 2.0
