"""Adam with bias correction over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NumericError

__all__ = ["AdamState", "adam_step", "Adam"]


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor],
              state: AdamState,
              lr: float = 0.001,
              betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> int:
    """One update over all params; returns the new step count t.

    Missing gradients count as zero. Non-finite gradients abort with an
    error naming the offending parameter.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise NumericError(f"adam_step: non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return t


class Adam:
    """Stateful convenience wrapper used by the trainer."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> int:
        return adam_step(self.params, self.state, self.lr, self.betas, self.eps)
