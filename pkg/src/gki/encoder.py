"""Graph encoder producing per-layer node representations.

Default backbone: GCN layers h^(l) = PReLU(A_hat @ h^(l-1) @ W^(l)) over a
degree-normalized adjacency with unit self-loops. A GIN-0 backbone (sum
aggregation into a 2-layer MLP) is available behind config.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .graphs import PatientGraph
from .rng import substream

__all__ = [
    "normalize_adjacency",
    "aggregation_matrix",
    "init_encoder_params",
    "encoder_forward",
    "encoder_param_names",
    "PRELU_INIT",
]

PRELU_INIT = 0.25


def _weight_matrix(graph: PatientGraph, transform: str) -> np.ndarray:
    n = graph.n_nodes
    w = np.zeros((n, n), dtype=np.float64)
    for s, d, weight in graph.edges:
        if weight < 0 or not np.isfinite(weight):
            raise DataError(f"graph {graph.graph_id}: invalid edge weight {weight}")
        # duplicate (src, dst) pairs keep the minimum, matching construction
        w[s, d] = weight if w[s, d] == 0.0 else min(w[s, d], weight)
    if transform == "log1p":
        w = np.log1p(w)
    elif transform != "raw":
        raise DataError(f"unknown weight transform {transform!r}")
    return w


def normalize_adjacency(graph: PatientGraph, mode: str = "symmetric",
                        transform: str = "raw") -> np.ndarray:
    """Propagation matrix with unit self-loops.

    symmetric: max(W, W^T), +I, then D^(-1/2) A D^(-1/2).
    directed:  propagate along stored edge direction (src -> dst), +I,
               normalized by in-degree: D^(-1) (W^T + I).
    """
    w = _weight_matrix(graph, transform)
    if mode == "symmetric":
        a = np.maximum(w, w.T) + np.eye(graph.n_nodes)
        d = a.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(d)
        return (inv_sqrt[:, None] * a) * inv_sqrt[None, :]
    if mode == "directed":
        a = w.T + np.eye(graph.n_nodes)
        d = a.sum(axis=1)
        return a / d[:, None]
    raise DataError(f"unknown adjacency mode {mode!r}")


def aggregation_matrix(graph: PatientGraph, backbone: str = "gcn",
                       mode: str = "symmetric", transform: str = "raw") -> np.ndarray:
    """Backbone-appropriate propagation matrix (GIN sums, GCN normalizes)."""
    if backbone == "gin":
        w = _weight_matrix(graph, transform)
        return np.maximum(w, w.T) + np.eye(graph.n_nodes)
    return normalize_adjacency(graph, mode=mode, transform=transform)


def _xavier(rng, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def encoder_param_names(n_layers: int, backbone: str = "gcn") -> list[str]:
    names = []
    for l in range(n_layers):
        if backbone == "gin":
            names += [f"enc.{l}.W1", f"enc.{l}.a1", f"enc.{l}.W2", f"enc.{l}.a2"]
        else:
            names += [f"enc.{l}.W", f"enc.{l}.a"]
    return names


def init_encoder_params(seed: int, in_dim: int, hidden: int, n_layers: int,
                        backbone: str = "gcn", dtype=np.float64) -> dict[str, Tensor]:
    """Xavier-uniform weights, PReLU slopes at 0.25, seeded per layer."""
    params: dict[str, Tensor] = {}
    dims = [in_dim] + [hidden] * n_layers
    for l in range(n_layers):
        rng = substream(seed, f"encoder:layer{l}")
        if backbone == "gin":
            params[f"enc.{l}.W1"] = ad.parameter(_xavier(rng, dims[l], hidden, dtype), f"enc.{l}.W1")
            params[f"enc.{l}.a1"] = ad.parameter(np.asarray(PRELU_INIT, dtype=dtype), f"enc.{l}.a1")
            params[f"enc.{l}.W2"] = ad.parameter(_xavier(rng, hidden, hidden, dtype), f"enc.{l}.W2")
            params[f"enc.{l}.a2"] = ad.parameter(np.asarray(PRELU_INIT, dtype=dtype), f"enc.{l}.a2")
        else:
            params[f"enc.{l}.W"] = ad.parameter(_xavier(rng, dims[l], dims[l + 1], dtype), f"enc.{l}.W")
            params[f"enc.{l}.a"] = ad.parameter(np.asarray(PRELU_INIT, dtype=dtype), f"enc.{l}.a")
    return params


def encoder_forward(x: Tensor | np.ndarray, a_hat: Tensor | np.ndarray,
                    params: dict[str, Tensor], n_layers: int,
                    backbone: str = "gcn") -> list[Tensor]:
    """All layer outputs h^(1..L); h^(0) = x is not returned."""
    h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    a = a_hat if isinstance(a_hat, Tensor) else Tensor(np.asarray(a_hat, dtype=np.float64))
    outs: list[Tensor] = []
    for l in range(n_layers):
        agg = ad.matmul(a, h)
        if backbone == "gin":
            z = ad.prelu(ad.matmul(agg, params[f"enc.{l}.W1"]), params[f"enc.{l}.a1"])
            h = ad.prelu(ad.matmul(z, params[f"enc.{l}.W2"]), params[f"enc.{l}.a2"])
        else:
            h = ad.prelu(ad.matmul(agg, params[f"enc.{l}.W"]), params[f"enc.{l}.a"])
        outs.append(h)
    return outs
