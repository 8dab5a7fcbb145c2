"""Decoupled-weight-decay Adam with a polynomial warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, slots=True)
class Schedule:
    kind: str = "polynomial"  # or "constant"
    lr: float = 1e-3
    total_steps: int = 1000
    warmup_frac: float = 0.05
    power: float = 1.0
    end_lr: float = 0.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "constant"):
            raise ValueError(f"unknown schedule {self.kind!r}")

    def __call__(self, step: int) -> float:
        """Learning rate for 0-based *step*."""
        if self.kind == "constant":
            return self.lr
        warm = int(round(self.warmup_frac * self.total_steps))
        if step < warm:
            return self.lr * (step + 1) / warm
        span = max(self.total_steps - warm, 1)
        frac = min((step - warm) / span, 1.0)
        return (self.lr - self.end_lr) * (1.0 - frac) ** self.power + self.end_lr


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], schedule: Schedule, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.schedule = schedule
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> float:
        lr = self.schedule(self.t)
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and p.ndim >= 2:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr
