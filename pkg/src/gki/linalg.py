"""Dense matrix primitives with explicit shape checking.

Matrices are row-major float numpy arrays. Every binary op raises
ShapeError naming both operand shapes instead of relying on numpy's
broadcasting surprises; the autodiff layer builds on these.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "as_matrix",
    "matmul",
    "add",
    "hadamard",
    "transpose",
    "row_sum",
    "frobenius_norm",
]


def as_matrix(values, dtype=np.float64) -> np.ndarray:
    """Coerce to a 2-D float array; 1-D input becomes a single row."""
    a = np.asarray(values, dtype=dtype)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim} shape={a.shape}")
    return a


def _check_2d(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"{op}: operands must be 2-D, got {a.shape} and {b.shape}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b, "add")
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return a + b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b, "hadamard")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return a * b


def transpose(a: np.ndarray) -> np.ndarray:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got shape={a.shape}")
    return a.T.copy()


def row_sum(a: np.ndarray) -> np.ndarray:
    """Sum over rows: (n, d) -> (1, d)."""
    if a.ndim != 2:
        raise ShapeError(f"row_sum: expected 2-D, got shape={a.shape}")
    return a.sum(axis=0, keepdims=True)


def frobenius_norm(a: np.ndarray) -> float:
    if a.ndim != 2:
        raise ShapeError(f"frobenius_norm: expected 2-D, got shape={a.shape}")
    return float(np.sqrt((a * a).sum()))
