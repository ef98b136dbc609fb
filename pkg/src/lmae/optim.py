"""AdamW with decoupled weight decay, and a one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .tensor import Parameter


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""


class AdamW:
    """Adam with weight decay applied to the value, not the gradient.

    With a zero gradient, lr=1.0 and weight_decay=0.01, one step shrinks a
    parameter by the factor 0.99 exactly; the moment update contributes
    nothing because m stays zero.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("optimizer received duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {p.name: np.zeros_like(p.value) for p in self.params}
        self._v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, lr: float | None = None):
        if lr is None:
            lr = self.lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in parameter {p.name!r}")
            m = self._m[p.name]
            v = self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            value = p.value
            if self.weight_decay != 0.0:
                value *= 1.0 - lr * self.weight_decay
            m_hat = m / bc1
            v_hat = v / bc2
            value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array([self.step_count], dtype=np.int64)}
        for name in self._m:
            out[f"m.{name}"] = self._m[name].copy()
            out[f"v.{name}"] = self._v[name].copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        self.step_count = int(state["step_count"][0])
        for name in self._m:
            self._m[name][...] = state[f"m.{name}"]
            self._v[name][...] = state[f"v.{name}"]


def onecycle_lr(step: int, total_steps: int, max_lr: float,
                pct_start: float = 0.3, start_div: float = 25.0,
                final_div: float = 1e4) -> float:
    """Cosine warmup from max_lr/start_div to max_lr, then cosine anneal to
    max_lr/final_div. Defined on integer steps 0..total_steps inclusive."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if not 0.0 <= pct_start <= 1.0:
        raise ValueError(f"pct_start must be in [0, 1], got {pct_start}")
    start_lr = max_lr / start_div
    final_lr = max_lr / final_div
    peak = pct_start * total_steps
    if step <= peak:
        if peak == 0.0:
            return max_lr
        frac = step / peak
        return start_lr + (max_lr - start_lr) * 0.5 * (1.0 - math.cos(math.pi * frac))
    span = total_steps - peak
    if span == 0.0:
        return max_lr
    frac = (step - peak) / span
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))
