"""Differentiable k-means landmarks, distance kernels, and feature maps.

The two views come from one embedding through two geometries: straight
Euclidean distance, and geodesic distance after projection onto a sphere
(scale-invariant). Node-level maps evaluate exp(-d) against learnable
centroids (Nystroem landmarks); graph-level maps sum node rows per layer
and concatenate across layers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, sparsemax
from .errors import NumericError, ShapeError
from .rng import substream

__all__ = [
    "KernelConfig",
    "KernelViews",
    "sparsemax",
    "cluster_assign",
    "clustering_loss",
    "dist_euclidean",
    "dist_spherical",
    "kernel_eval",
    "nystrom_map",
    "graph_map",
    "make_views",
    "init_centroids",
    "EPS_SMOOTH",
    "EPS_DIST",
]

EPS_SMOOTH = 1e-12  # clustering-loss smoothing inside the sqrt
EPS_DIST = 1e-24    # pairwise-distance smoothing (bounds the sqrt gradient)

PINV_MODES = ("identity", "pinv", "pinv_sqrt")
KINDS = ("euclidean", "spherical")


@dataclass
class KernelConfig:
    """pinv_mode selects the Nystroem multiplier: identity (default),
    pinv (literal Gram pseudo-inverse), or pinv_sqrt (its PSD square root)."""
    pinv_mode: str = "identity"
    radius: float = 1.0
    center: np.ndarray | None = None
    eps: float = 1e-6

    def __post_init__(self):
        if self.pinv_mode not in PINV_MODES:
            raise NumericError(f"unknown pinv_mode {self.pinv_mode!r}; expected one of {PINV_MODES}")
        if not self.radius > 0:
            raise NumericError(f"sphere radius must be > 0, got {self.radius}")
        if not (0.0 < self.eps <= 1e-3):
            raise NumericError(f"arccos clamp eps must lie in (0, 1e-3], got {self.eps}")


@dataclass
class KernelViews:
    """Node maps from the last layer; graph maps over all layers."""
    h_e: Tensor  # (n, K)
    h_s: Tensor  # (n, K)
    g_e: Tensor  # (1, K*L)
    g_s: Tensor  # (1, K*L)


def init_centroids(seed: int, n_layers: int, n_clusters: int, dim: int,
                   dtype=np.float64) -> dict[str, Tensor]:
    """Per-layer centroid banks, rows i.i.d. normal(0, 0.1), seeded."""
    params: dict[str, Tensor] = {}
    for l in range(n_layers):
        rng = substream(seed, f"centroids:layer{l}")
        c = rng.normal(0.0, 0.1, size=(n_clusters, dim)).astype(dtype)
        params[f"cent.{l}"] = ad.parameter(c, f"cent.{l}")
    return params


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# -- assignments and reconstruction --------------------------------------

def cluster_assign(h, c) -> Tensor:
    """Rows of sparsemax(h C^T): soft cluster memberships on the simplex."""
    h, c = _as_tensor(h), _as_tensor(c)
    if h.data.shape[1] != c.data.shape[1]:
        raise ShapeError(f"cluster_assign: dim mismatch, h {h.data.shape} vs C {c.data.shape}")
    return ad.sparsemax_rows(ad.matmul(h, ad.transpose(c)))


def clustering_loss(hs: list, assigns: list, cs: list) -> Tensor:
    """Sum over layers of sqrt(eps + ||h - H C||_F^2)."""
    if not (len(hs) == len(assigns) == len(cs)):
        raise ShapeError("clustering_loss: per-layer lists must align")
    total = None
    for h, hh, c in zip(hs, assigns, cs):
        h, hh, c = _as_tensor(h), _as_tensor(hh), _as_tensor(c)
        resid = h - ad.matmul(hh, c)
        term = ad.sqrt(ad.sum_all(resid * resid) + EPS_SMOOTH)
        total = term if total is None else total + term
    return total


# -- scalar distances and kernels ----------------------------------------

def dist_euclidean(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"dist_euclidean: shapes differ, {x.shape} vs {y.shape}")
    return float(np.sqrt(((x - y) ** 2).sum()))


def _project_unit(v: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    center = 0.0 if cfg.center is None else np.asarray(cfg.center, dtype=np.float64)
    u = v - center
    norm = np.sqrt((u * u).sum())
    if norm == 0.0:
        raise NumericError("dist_spherical: zero-norm input, projection undefined")
    return u / norm


def dist_spherical(x, y, cfg: KernelConfig | None = None) -> float:
    """Geodesic distance after projecting both points onto the cfg sphere."""
    cfg = cfg or KernelConfig()
    ux = _project_unit(np.asarray(x, dtype=np.float64).ravel(), cfg)
    uy = _project_unit(np.asarray(y, dtype=np.float64).ravel(), cfg)
    if ux.shape != uy.shape:
        raise ShapeError(f"dist_spherical: shapes differ, {ux.shape} vs {uy.shape}")
    cos = float(np.clip(ux @ uy, -1.0 + cfg.eps, 1.0 - cfg.eps))
    return float(cfg.radius * np.arccos(cos))


def kernel_eval(x, y, kind: str = "euclidean", cfg: KernelConfig | None = None) -> float:
    if kind == "euclidean":
        return float(np.exp(-dist_euclidean(x, y)))
    if kind == "spherical":
        return float(np.exp(-dist_spherical(x, y, cfg)))
    raise NumericError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")


# -- pairwise distance matrices on the tape ------------------------------

def _pairwise_euclidean_t(h: Tensor, c: Tensor) -> Tensor:
    # quadratic form; clamp guards fp-negative squares, EPS_DIST bounds
    # the sqrt gradient at coincident points
    h_sq = ad.sum_axis(h * h, axis=1, keepdims=True)            # (n, 1)
    c_sq = ad.transpose(ad.sum_axis(c * c, axis=1, keepdims=True))  # (1, K)
    cross = ad.matmul(h, ad.transpose(c))                       # (n, K)
    sq = ad.clamp_min0(h_sq + c_sq - 2.0 * cross)
    return ad.sqrt(sq + EPS_DIST)


def _unit_rows_t(x: Tensor, cfg: KernelConfig, what: str) -> Tensor:
    if cfg.center is not None:
        x = x - Tensor(np.asarray(cfg.center, dtype=np.float64).reshape(1, -1))
    sq = ad.sum_axis(x * x, axis=1, keepdims=True)
    if (sq.data == 0.0).any():
        raise NumericError(f"{what}: zero-norm row, spherical projection undefined")
    return x / ad.sqrt(sq)


def _pairwise_spherical_t(h: Tensor, c: Tensor, cfg: KernelConfig) -> Tensor:
    hn = _unit_rows_t(h, cfg, "spherical map (rows)")
    cn = _unit_rows_t(c, cfg, "spherical map (landmarks)")
    cos = ad.matmul(hn, ad.transpose(cn))
    return cfg.radius * ad.arccos_clamped(cos, eps=cfg.eps)


def _gram_euclidean_t(c: Tensor) -> Tensor:
    # Like _pairwise_euclidean_t(c, c) but with the diagonal pinned to an
    # exact zero distance: the quadratic form leaves fp noise ~1e-16 there
    # and sqrt turns it into a chaotic 1e-8 signal that is not differentiable
    # in any useful sense. d(c_i, c_i) is identically 0, gradient 0.
    c_sq = ad.sum_axis(c * c, axis=1, keepdims=True)
    sq = ad.clamp_min0(c_sq + ad.transpose(c_sq) - 2.0 * ad.matmul(c, ad.transpose(c)))
    mask = Tensor(1.0 - np.eye(c.data.shape[0]))
    return ad.sqrt(sq * mask + EPS_DIST)


def nystrom_map(h, c, kind: str = "euclidean", cfg: KernelConfig | None = None) -> Tensor:
    """Node-level feature map: rows [k(h_i, c_1), ..., k(h_i, c_K)] @ M."""
    cfg = cfg or KernelConfig()
    h, c = _as_tensor(h), _as_tensor(c)
    if h.data.shape[1] != c.data.shape[1]:
        raise ShapeError(f"nystrom_map: dim mismatch, h {h.data.shape} vs C {c.data.shape}")
    if kind == "euclidean":
        b = ad.exp(-_pairwise_euclidean_t(h, c))
    elif kind == "spherical":
        b = ad.exp(-_pairwise_spherical_t(h, c, cfg))
    else:
        raise NumericError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")
    if cfg.pinv_mode == "identity":
        return b
    if kind == "euclidean":
        gram = ad.exp(-_gram_euclidean_t(c))
    else:
        gram = ad.exp(-_pairwise_spherical_t(c, c, cfg))
    if not np.isfinite(gram.data).all():
        raise NumericError("nystrom_map: non-finite landmark Gram matrix")
    gram = 0.5 * (gram + ad.transpose(gram))
    if cfg.pinv_mode == "pinv":
        return ad.matmul(b, ad.psd_pinv(gram))
    return ad.matmul(b, ad.psd_pinv_sqrt(gram))


def graph_map(hs: list, cs: list, kind: str = "euclidean",
              cfg: KernelConfig | None = None) -> Tensor:
    """Per layer, column-sum the node map to K entries; concat to K*L."""
    if not hs or len(hs) != len(cs):
        raise ShapeError("graph_map: need one centroid bank per layer")
    parts = [ad.sum_axis(nystrom_map(h, c, kind, cfg), axis=0, keepdims=True)
             for h, c in zip(hs, cs)]
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


def make_views(hs: list, cs: list, cfg: KernelConfig | None = None) -> KernelViews:
    """Node views from the last layer's map; graph views over all layers."""
    cfg = cfg or KernelConfig()
    return KernelViews(
        h_e=nystrom_map(hs[-1], cs[-1], "euclidean", cfg),
        h_s=nystrom_map(hs[-1], cs[-1], "spherical", cfg),
        g_e=graph_map(hs, cs, "euclidean", cfg),
        g_s=graph_map(hs, cs, "spherical", cfg),
    )
