"""Minimal reverse-mode tape over numpy arrays.

Forward ops record, per input that requires gradient, a vector-Jacobian
closure; backward() walks the tape in reverse topological order and
accumulates into .grad. The op set is fixed and every op's gradient is
covered by grad_check in the test suite. Arrays are float64 by default;
float32 flows through untouched when callers opt in.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "matmul",
    "transpose",
    "exp",
    "log",
    "sqrt",
    "sum_all",
    "sum_axis",
    "logsumexp_rows",
    "concat",
    "prelu",
    "sparsemax_rows",
    "arccos_clamped",
    "clamp_min0",
    "psd_pinv",
    "psd_pinv_sqrt",
    "sparsemax",
]

_EIG_TIE_TOL = 1e-12


class Tensor:
    """A node on the tape: value, optional gradient, and backward edges."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_edges")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._edges: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._edges:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._edges:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return _elementwise_add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _elementwise_add(self, _elementwise_neg(_wrap(other)))

    def __rsub__(self, other):
        return _elementwise_add(_wrap(other), _elementwise_neg(self))

    def __mul__(self, other):
        return _elementwise_mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _elementwise_div(self, _wrap(other))

    def __rtruediv__(self, other):
        return _elementwise_div(_wrap(other), self)

    def __neg__(self):
        return _elementwise_neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, p):
        return pow_const(self, p)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, name={self.name!r})"


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def parameter(data, name: str) -> Tensor:
    """Named trainable tensor (a copy, so callers keep ownership)."""
    return Tensor(np.array(data, dtype=np.asarray(data).dtype, copy=True), requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, edges) -> Tensor:
    out = Tensor(data)
    kept = tuple((p, fn) for p, fn in edges if p.requires_grad)
    out._edges = kept
    out.requires_grad = bool(kept)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise --------------------------------------------------------

def _elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def _elementwise_neg(a: Tensor) -> Tensor:
    return _make(-a.data, [(a, lambda g: -g)])


def _elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(data, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def _elementwise_div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    return _make(data, [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def pow_const(a: Tensor, p: float) -> Tensor:
    data = a.data ** p
    return _make(data, [(a, lambda g: g * p * a.data ** (p - 1))])


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, [(a, lambda g: g * data)])


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)
    # Guard the 0-input corner: the true one-sided derivative is unbounded;
    # clamping the denominator keeps gradients finite instead of NaN-poisoning.
    return _make(data, [(a, lambda g: g / np.maximum(2.0 * data, 1e-300))])


def clamp_min0(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    return _make(data, [(a, lambda g: g * (a.data > 0.0))])


def arccos_clamped(a: Tensor, eps: float = 1e-6) -> Tensor:
    """arccos(clip(x, -1+eps, 1-eps)); gradient is zero where the clip binds."""
    lo, hi = -1.0 + eps, 1.0 - eps
    t = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    data = np.arccos(t)

    def vjp(g):
        return g * np.where(inside, -1.0 / np.sqrt(1.0 - t * t), 0.0)

    return _make(data, [(a, vjp)])


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-D, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    return _make(data, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), [(a, lambda g: g.T.copy())])


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape).copy()
    return _make(data, [(a, lambda g: g.reshape(a.data.shape).copy())])


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())
    return _make(data, [(a, lambda g: np.broadcast_to(g, a.data.shape).copy())])


def sum_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _make(data, [(a, vjp)])


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log(sum(exp(x))), max-shifted: (n, k) -> (n, 1)."""
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    data = m + np.log(s)
    soft = e / s
    return _make(data, [(a, lambda g: g * soft)])


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    data = np.concatenate(datas, axis=axis)
    edges = []
    offset = 0
    for t in tensors:
        size = t.data.shape[axis]
        lo, hi = offset, offset + size

        def vjp(g, lo=lo, hi=hi):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        edges.append((t, vjp))
        offset += size
    return _make(data, edges)


# -- nonlinearities ------------------------------------------------------

def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Elementwise x if x >= 0 else slope * x, with a learnable scalar slope."""
    a = slope.data
    pos = x.data >= 0.0
    data = np.where(pos, x.data, a * x.data)
    return _make(data, [
        (x, lambda g: g * np.where(pos, 1.0, a)),
        (slope, lambda g: np.asarray((g * np.where(pos, 0.0, x.data)).sum()).reshape(slope.data.shape)),
    ])


def _sparsemax_forward(z: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto the probability simplex."""
    zs = np.sort(z, axis=1)[:, ::-1]
    css = np.cumsum(zs, axis=1)
    k = np.arange(1, z.shape[1] + 1)
    support = 1.0 + k * zs > css
    k_max = support.sum(axis=1)
    tau = (np.take_along_axis(css, (k_max - 1)[:, None], axis=1) - 1.0) / k_max[:, None]
    return np.maximum(z - tau, 0.0)


def sparsemax(z: np.ndarray) -> np.ndarray:
    """Plain-array sparsemax over rows (no tape)."""
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z.reshape(1, -1)
    if z.ndim != 2 or z.shape[1] == 0:
        raise ShapeError(f"sparsemax: expected nonempty rows, got shape={z.shape}")
    if not np.isfinite(z).all():
        raise NumericError("sparsemax: non-finite input")
    out = _sparsemax_forward(z)
    return out[0] if squeeze else out


def sparsemax_rows(z: Tensor) -> Tensor:
    if z.data.ndim != 2 or z.data.shape[1] == 0:
        raise ShapeError(f"sparsemax_rows: expected nonempty 2-D rows, got shape={z.data.shape}")
    if not np.isfinite(z.data).all():
        raise NumericError("sparsemax_rows: non-finite input")
    data = _sparsemax_forward(z.data)
    mask = data > 0.0

    def vjp(g):
        # Jacobian on the support S: I - 1 1^T / |S|; zero off-support.
        cnt = mask.sum(axis=1, keepdims=True)
        mean = (g * mask).sum(axis=1, keepdims=True) / cnt
        return mask * (g - mean)

    return _make(data, [(z, vjp)])


# -- spectral ops on symmetric PSD matrices ------------------------------

def _spectral(a: Tensor, f, fprime, cutoff_ratio: float) -> Tensor:
    A = 0.5 * (a.data + a.data.T)
    w, U = np.linalg.eigh(A)
    lam_max = float(w.max()) if w.size else 0.0
    cutoff = cutoff_ratio * max(lam_max, 0.0)
    keep = w > cutoff
    fw = np.where(keep, f(np.where(keep, w, 1.0)), 0.0)
    fpw = np.where(keep, fprime(np.where(keep, w, 1.0)), 0.0)
    data = (U * fw) @ U.T

    def vjp(g):
        g_sym = 0.5 * (g + g.T)
        ghat = U.T @ g_sym @ U
        diff = w[:, None] - w[None, :]
        fdiff = fw[:, None] - fw[None, :]
        tie = np.abs(diff) <= _EIG_TIE_TOL * max(1.0, abs(lam_max))
        gamma = np.where(tie, 0.5 * (fpw[:, None] + fpw[None, :]), fdiff / np.where(tie, 1.0, diff))
        dA = U @ (gamma * ghat) @ U.T
        # chain through the symmetrization of the input
        return 0.5 * (dA + dA.T)

    return _make(data, [(a, vjp)])


def psd_pinv(a: Tensor, cutoff_ratio: float = 1e-10) -> Tensor:
    """Pseudo-inverse of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues at or below cutoff_ratio * lambda_max are treated as zero.
    """
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"psd_pinv: expected square matrix, got shape={a.data.shape}")
    return _spectral(a, lambda w: 1.0 / w, lambda w: -1.0 / (w * w), cutoff_ratio)


def psd_pinv_sqrt(a: Tensor, cutoff_ratio: float = 1e-10) -> Tensor:
    """Symmetric PSD square root of the pseudo-inverse."""
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"psd_pinv_sqrt: expected square matrix, got shape={a.data.shape}")
    return _spectral(a, lambda w: w ** -0.5, lambda w: -0.5 * w ** -1.5, cutoff_ratio)
