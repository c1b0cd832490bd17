"""Central-difference gradient verification for tape-built scalars.

A check passes iff the worst elementwise relative error is at most rtol,
with denominators floored at max(|analytic|, |numeric|, 1e-8) so that
near-zero gradients do not blow up the ratio.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .errors import NumericError

__all__ = ["GradCheckResult", "grad_check"]

_DENOM_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (f"grad_check {state}: max_rel_err={self.max_rel_err:.3e} "
                f"at {self.worst_param}{list(self.worst_index)}")


def _evaluate(f: Callable, arrays: dict[str, np.ndarray], want_grads: bool):
    params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in arrays.items()}
    out = f(params)
    if not isinstance(out, Tensor):
        raise NumericError("grad_check: f must return a Tensor scalar")
    if out.data.size != 1:
        raise NumericError(f"grad_check: f must return a scalar, got shape={out.data.shape}")
    value = float(out.data)
    if not np.isfinite(value):
        raise NumericError("grad_check: f returned a non-finite value")
    if not want_grads:
        return value, None
    out.backward()
    grads = {}
    for k, p in params.items():
        grads[k] = np.zeros_like(p.data) if p.grad is None else p.grad
    return value, grads


def grad_check(f: Callable[[dict[str, Tensor]], Tensor],
               params: dict[str, np.ndarray],
               rtol: float = 1e-4,
               h: float = 1e-5) -> GradCheckResult:
    """Compare tape gradients of f against central differences.

    f takes a dict of named Tensors and must rebuild its computation on
    every call (fresh tape); params holds the evaluation point.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = _evaluate(f, arrays, want_grads=True)

    worst = 0.0
    worst_param = ""
    worst_index: tuple = ()
    per_param: dict[str, float] = {}
    for name, base in arrays.items():
        a_grad = analytic[name]
        param_worst = 0.0
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus, _ = _evaluate(f, arrays, want_grads=False)
            flat[i] = orig - h
            f_minus, _ = _evaluate(f, arrays, want_grads=False)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic_i = float(a_grad.reshape(-1)[i])
            denom = max(abs(analytic_i), abs(numeric), _DENOM_FLOOR)
            rel = abs(analytic_i - numeric) / denom
            if rel > param_worst:
                param_worst = rel
            if rel > worst:
                worst = rel
                worst_param = name
                worst_index = np.unravel_index(i, base.shape)
        per_param[name] = param_worst
    return GradCheckResult(
        passed=worst <= rtol,
        max_rel_err=worst,
        worst_param=worst_param,
        worst_index=tuple(int(j) for j in worst_index),
        per_param=per_param,
    )
