"""Projection heads and contrastive objectives over the two kernel views.

Node rows (last encoder layer) and whole-graph summaries from the Euclidean
and spherical kernel maps are pushed through two small MLP heads -- one
shared by node views, one by graph views -- into a common space.  Training
pulls each node toward its own graph's opposite-manifold summary and each
graph's two summaries toward each other, scored by temperature-scaled
cosine similarity (NT-Xent).  The heads exist only to shape this loss;
evaluation reads the raw kernel maps and never touches them.

Negative sampling has two modes:

* ``batch``    -- candidates are every graph summary of the opposite
                  manifold in the mini-batch (the default).
* ``self_only``-- each anchor sees only its paired positive, so every
                  NT-Xent term is identically zero and no cross-graph
                  similarity matrix is ever materialized; useful for
                  memory comparisons and as a lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import PRELU_INIT, _xavier
from .errors import NumericError, ShapeError
from .kernels import KernelViews, _as_tensor
from .rng import substream

HEAD_HIDDEN = 128
HEAD_OUT = 128

NEGATIVES_MODES = ("batch", "self_only")

# Rows with norm below this floor divide by the floor instead; together with
# a zero numerator that pins the cosine of a zero vector to 0.
_NORM_FLOOR = 1e-300


@dataclass
class LossConfig:
    tau: float = 0.01
    negatives_mode: str = "batch"
    w_node_graph: float = 1.0
    w_graph_graph: float = 1.0
    w_recon: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise NumericError(f"temperature must be > 0, got {self.tau}")
        if self.negatives_mode not in NEGATIVES_MODES:
            raise NumericError(
                f"unknown negatives_mode {self.negatives_mode!r}; expected one of {NEGATIVES_MODES}")


# -- projection heads ------------------------------------------------------

def head_param_names(prefix: str) -> list[str]:
    names = []
    for i in range(3):
        names += [f"{prefix}.{i}.W", f"{prefix}.{i}.b"]
        if i < 2:
            names.append(f"{prefix}.{i}.a")
    return names


def init_projection_head(seed: int, in_dim: int, prefix: str,
                         hidden: int = HEAD_HIDDEN, out_dim: int = HEAD_OUT,
                         dtype=np.float64) -> dict[str, Tensor]:
    """Three affine layers with PReLU between: in -> hidden -> hidden -> out."""
    if min(in_dim, hidden, out_dim) < 1:
        raise ShapeError(
            f"projection head dims must be >= 1, got {(in_dim, hidden, out_dim)}")
    params: dict[str, Tensor] = {}
    dims = [in_dim, hidden, hidden, out_dim]
    for i in range(3):
        rng = substream(seed, f"{prefix}:layer{i}")
        params[f"{prefix}.{i}.W"] = ad.parameter(
            _xavier(rng, dims[i], dims[i + 1], dtype), f"{prefix}.{i}.W")
        params[f"{prefix}.{i}.b"] = ad.parameter(
            np.zeros(dims[i + 1], dtype=dtype), f"{prefix}.{i}.b")
        if i < 2:
            params[f"{prefix}.{i}.a"] = ad.parameter(
                np.asarray(PRELU_INIT, dtype=dtype), f"{prefix}.{i}.a")
    return params


def apply_projection_head(params: dict[str, Tensor], prefix: str, x) -> Tensor:
    h = _as_tensor(x)
    if h.data.shape[1] != params[f"{prefix}.0.W"].data.shape[0]:
        raise ShapeError(
            f"projection head {prefix!r}: input {h.data.shape} vs "
            f"W0 {params[f'{prefix}.0.W'].data.shape}")
    for i in range(3):
        h = ad.matmul(h, params[f"{prefix}.{i}.W"]) + params[f"{prefix}.{i}.b"]
        if i < 2:
            h = ad.prelu(h, params[f"{prefix}.{i}.a"])
    return h


# -- NT-Xent ----------------------------------------------------------------

def _unit_rows(x: Tensor) -> Tensor:
    n = ad.sqrt(ad.sum_axis(x * x, axis=1, keepdims=True))
    safe = ad.clamp_min0(n - _NORM_FLOOR) + _NORM_FLOOR
    return x / safe


def nt_xent_rows(p_rows, candidates, pos_idx, tau: float) -> Tensor:
    """Per-anchor NT-Xent against a shared candidate bank: (n, m) -> (n, 1).

    Row i pays -log softmax over all m candidates at its positive column
    pos_idx[i]; similarities are cosine, zero-norm rows score 0 everywhere.
    """
    p_rows, candidates = _as_tensor(p_rows), _as_tensor(candidates)
    if candidates.data.shape[0] == 0:
        raise NumericError("nt_xent: empty candidate set")
    if p_rows.data.shape[1] != candidates.data.shape[1]:
        raise ShapeError(
            f"nt_xent: dim mismatch, anchors {p_rows.data.shape} vs "
            f"candidates {candidates.data.shape}")
    n, m = p_rows.data.shape[0], candidates.data.shape[0]
    pos = np.asarray(pos_idx, dtype=int).ravel()
    if pos.shape[0] != n or (pos < 0).any() or (pos >= m).any():
        raise ShapeError(f"nt_xent: bad positive indices for {n} anchors, {m} candidates")
    scaled = ad.matmul(_unit_rows(p_rows), ad.transpose(_unit_rows(candidates))) * (1.0 / tau)
    onehot = np.zeros((n, m))
    onehot[np.arange(n), pos] = 1.0
    positive = ad.sum_axis(scaled * Tensor(onehot), axis=1, keepdims=True)
    return ad.logsumexp_rows(scaled) - positive


def _as_row(v) -> Tensor:
    t = _as_tensor(v)
    if t.data.ndim == 1:
        return ad.reshape(t, (1, t.data.shape[0]))
    if t.data.ndim == 2 and t.data.shape[0] == 1:
        return t
    raise ShapeError(f"nt_xent: expected a vector, got shape {t.data.shape}")


def nt_xent(p, q, negatives=(), tau: float = 0.01) -> Tensor:
    """Scalar NT-Xent of anchor p against positive q plus optional negatives."""
    if q is None:
        raise NumericError("nt_xent: empty candidate set")
    rows = [_as_row(q)] + [_as_row(v) for v in negatives]
    bank = rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)
    return ad.sum_all(nt_xent_rows(_as_row(p), bank, np.zeros(1, dtype=int), tau))


# -- batch losses -----------------------------------------------------------

@dataclass
class ProjectedBatch:
    """Everything the contrastive losses need, already in head space."""
    z_e: list[Tensor]  # per graph, (n_i, d_p) projected Euclidean node rows
    z_s: list[Tensor]  # per graph, (n_i, d_p) projected spherical node rows
    g_e: Tensor        # (N, d_p) projected Euclidean graph summaries
    g_s: Tensor        # (N, d_p) projected spherical graph summaries


def project_batch(views: list[KernelViews], params: dict[str, Tensor],
                  node_prefix: str = "head_node",
                  graph_prefix: str = "head_graph") -> ProjectedBatch:
    if not views:
        raise ShapeError("project_batch: empty batch")
    z_e = [apply_projection_head(params, node_prefix, v.h_e) for v in views]
    z_s = [apply_projection_head(params, node_prefix, v.h_s) for v in views]
    g_e = apply_projection_head(params, graph_prefix, ad.concat([v.g_e for v in views], axis=0))
    g_s = apply_projection_head(params, graph_prefix, ad.concat([v.g_s for v in views], axis=0))
    return ProjectedBatch(z_e=z_e, z_s=z_s, g_e=g_e, g_s=g_s)


def _graph_row(g: Tensor, i: int) -> Tensor:
    pick = np.zeros((1, g.data.shape[0]))
    pick[0, i] = 1.0
    return ad.matmul(Tensor(pick), g)


def node_graph_loss(batch: ProjectedBatch, cfg: LossConfig | None = None) -> Tensor:
    """Cross-manifold node-to-graph loss, node-mean per graph, summed over
    the batch.  Each node row is an anchor twice: its Euclidean projection
    against the graph's spherical summary and vice versa."""
    cfg = cfg or LossConfig()
    n_graphs = batch.g_e.data.shape[0]
    counts = [z.data.shape[0] for z in batch.z_e]
    if len(batch.z_e) != n_graphs or len(batch.z_s) != n_graphs:
        raise ShapeError(
            f"node_graph_loss: {len(batch.z_e)} node blocks vs {n_graphs} graph rows")
    if counts != [z.data.shape[0] for z in batch.z_s]:
        raise ShapeError("node_graph_loss: Euclidean/spherical node counts differ")
    if cfg.negatives_mode == "self_only":
        total = None
        for i in range(n_graphs):
            zeros = np.zeros(counts[i], dtype=int)
            rows = (nt_xent_rows(batch.z_e[i], _graph_row(batch.g_s, i), zeros, cfg.tau)
                    + nt_xent_rows(batch.z_s[i], _graph_row(batch.g_e, i), zeros, cfg.tau))
            term = ad.sum_all(rows) * (1.0 / counts[i])
            total = term if total is None else total + term
        return total
    z_e = ad.concat(batch.z_e, axis=0)
    z_s = ad.concat(batch.z_s, axis=0)
    pos = np.repeat(np.arange(n_graphs), counts)
    # node-mean: weight each row by 1/n_i so large graphs do not dominate
    w = Tensor((1.0 / np.repeat(np.asarray(counts, dtype=np.float64), counts))[:, None])
    rows = (nt_xent_rows(z_e, batch.g_s, pos, cfg.tau)
            + nt_xent_rows(z_s, batch.g_e, pos, cfg.tau))
    return ad.sum_all(rows * w)


def graph_graph_loss(batch: ProjectedBatch, cfg: LossConfig | None = None) -> Tensor:
    """Paired graph-summary loss, both directions, summed over the batch."""
    cfg = cfg or LossConfig()
    n_graphs = batch.g_e.data.shape[0]
    if batch.g_e.data.shape != batch.g_s.data.shape:
        raise ShapeError(
            f"graph_graph_loss: summary shapes differ, {batch.g_e.data.shape} "
            f"vs {batch.g_s.data.shape}")
    if cfg.negatives_mode == "self_only":
        # single-candidate NT-Xent: logsumexp of one column equals the
        # positive itself, so both directions vanish identically
        cos = ad.sum_axis(_unit_rows(batch.g_e) * _unit_rows(batch.g_s), axis=1, keepdims=True)
        scaled = cos * (1.0 / cfg.tau)
        return ad.sum_all((ad.logsumexp_rows(scaled) - scaled) * 2.0)
    idx = np.arange(n_graphs)
    rows = (nt_xent_rows(batch.g_e, batch.g_s, idx, cfg.tau)
            + nt_xent_rows(batch.g_s, batch.g_e, idx, cfg.tau))
    return ad.sum_all(rows)


def total_loss(l_ng: Tensor, l_gg: Tensor, l_rec: Tensor,
               cfg: LossConfig | None = None) -> Tensor:
    """Weighted sum of the three components; rejects non-finite inputs."""
    cfg = cfg or LossConfig()
    for name, t in (("node-graph", l_ng), ("graph-graph", l_gg),
                    ("reconstruction", l_rec)):
        if not np.isfinite(np.asarray(t.data)).all():
            raise NumericError(f"total_loss: non-finite {name} component")
    return l_ng * cfg.w_node_graph + l_gg * cfg.w_graph_graph + l_rec * cfg.w_recon
