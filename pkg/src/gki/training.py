"""Mini-batch pre-training loop: encoder -> clusters -> views -> contrast.

Every epoch reshuffles the dataset under its own named substream, walks it
in fixed batch order (last partial batch kept), and takes one Adam step per
batch.  In ``batch`` negatives mode the whole mini-batch shares a tape so
in-batch negatives couple graphs; in ``self_only`` mode each graph gets its
own tape and gradients accumulate, so peak memory stays per-graph no matter
the batch size.

Checkpoints are written every epoch (last two kept) plus a final snapshot
at the configured path; resuming restores parameters, Adam moments, and the
epoch counter, so an interrupted run converges to the same trajectory as an
uninterrupted one.
"""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .contrast import (
    HEAD_HIDDEN,
    HEAD_OUT,
    LossConfig,
    graph_graph_loss,
    init_projection_head,
    node_graph_loss,
    project_batch,
    total_loss,
)
from .encoder import aggregation_matrix, encoder_forward, init_encoder_params
from .errors import DataError, NumericError
from .graphs import PatientGraph
from .kernels import (
    KernelConfig,
    KernelViews,
    cluster_assign,
    clustering_loss,
    init_centroids,
    make_views,
)
from .optim import Adam
from .rng import substream

CKPT_PATTERN = "ckpt_ep{epoch:05d}.gki"


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.001
    n_layers: int = 2
    hidden: int = 128
    n_clusters: int = 512
    tau: float = 0.01
    pinv_mode: str = "identity"
    negatives_mode: str = "batch"
    transform: str = "raw"
    backbone: str = "gcn"
    adjacency: str = "symmetric"
    head_hidden: int = HEAD_HIDDEN
    head_out: int = HEAD_OUT
    w_node_graph: float = 1.0
    w_graph_graph: float = 1.0
    w_recon: float = 1.0
    kernel_radius: float = 1.0
    kernel_eps: float = 1e-6
    checkpoint_path: str | None = None
    log_path: str | None = None
    keep_checkpoints: int = 2

    def __post_init__(self):
        if self.epochs < 0:
            raise DataError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "n_layers", "hidden", "n_clusters",
                     "head_hidden", "head_out", "keep_checkpoints"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise DataError(f"lr must be > 0, got {self.lr}")

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(pinv_mode=self.pinv_mode, radius=self.kernel_radius,
                            eps=self.kernel_eps)

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, negatives_mode=self.negatives_mode,
                          w_node_graph=self.w_node_graph,
                          w_graph_graph=self.w_graph_graph,
                          w_recon=self.w_recon)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    loss_node_graph: float
    loss_graph_graph: float
    loss_recon: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    CSV_HEADER = "epoch,L,L_NG,L_GG,L_rec,seconds"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(f"{r.epoch},{r.loss:.17g},{r.loss_node_graph:.17g},"
                         f"{r.loss_graph_graph:.17g},{r.loss_recon:.17g},{r.seconds:.6f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    log: TrainLog
    adam: Adam
    epochs_done: int


# -- model assembly -----------------------------------------------------------

def init_model_params(seed: int, in_dim: int, cfg: TrainConfig) -> dict[str, Tensor]:
    """Encoder weights, per-layer centroid banks, and both projection heads."""
    params: dict[str, Tensor] = {}
    params.update(init_encoder_params(seed, in_dim, cfg.hidden, cfg.n_layers, cfg.backbone))
    params.update(init_centroids(seed, cfg.n_layers, cfg.n_clusters, cfg.hidden))
    params.update(init_projection_head(
        seed, cfg.n_clusters, "head_node", cfg.head_hidden, cfg.head_out))
    params.update(init_projection_head(
        seed, cfg.n_clusters * cfg.n_layers, "head_graph", cfg.head_hidden, cfg.head_out))
    return params


def prepare_inputs(graphs: list[PatientGraph], cfg: TrainConfig) -> list[tuple]:
    """Constant per-graph (features, propagation matrix) pairs."""
    if not graphs:
        raise DataError("pretrain: need at least one graph")
    in_dim = graphs[0].node_features.shape[1]
    pairs = []
    for g in graphs:
        if g.node_features.shape[1] != in_dim:
            raise DataError(
                f"graph {g.graph_id!r}: feature dim {g.node_features.shape[1]} "
                f"differs from {in_dim}; all graphs must share one vocabulary")
        pairs.append((g.node_features,
                      aggregation_matrix(g, cfg.backbone, cfg.adjacency, cfg.transform)))
    return pairs


def _encode(x: np.ndarray, a_hat: np.ndarray, params: dict[str, Tensor],
            cfg: TrainConfig) -> tuple[KernelViews, Tensor]:
    """One graph through encoder + clustering; returns views and its L_rec."""
    hs = encoder_forward(x, a_hat, params, cfg.n_layers, cfg.backbone)
    cs = [params[f"cent.{l}"] for l in range(cfg.n_layers)]
    assigns = [cluster_assign(h, c) for h, c in zip(hs, cs)]
    l_rec = clustering_loss(hs, assigns, cs)
    views = make_views(hs, cs, cfg.kernel_config())
    return views, l_rec


def batch_loss(batch: list[tuple], params: dict[str, Tensor],
               cfg: TrainConfig) -> tuple[Tensor, float, float, float]:
    """Single-tape total loss over one mini-batch (negatives couple graphs)."""
    lcfg = cfg.loss_config()
    views: list[KernelViews] = []
    l_rec: Tensor | None = None
    for x, a_hat in batch:
        v, r = _encode(x, a_hat, params, cfg)
        views.append(v)
        l_rec = r if l_rec is None else l_rec + r
    proj = project_batch(views, params)
    l_ng = node_graph_loss(proj, lcfg)
    l_gg = graph_graph_loss(proj, lcfg)
    loss = total_loss(l_ng, l_gg, l_rec, lcfg)
    return loss, float(l_ng.data), float(l_gg.data), float(l_rec.data)


def _self_only_batch_backward(batch: list[tuple], params: dict[str, Tensor],
                              cfg: TrainConfig) -> tuple[float, float, float, float]:
    """Per-graph tapes with gradient accumulation; no cross-graph state."""
    lcfg = cfg.loss_config()
    tot = ng = gg = rec = 0.0
    for x, a_hat in batch:
        v, l_rec = _encode(x, a_hat, params, cfg)
        proj = project_batch([v], params)
        l_ng = node_graph_loss(proj, lcfg)
        l_gg = graph_graph_loss(proj, lcfg)
        loss = total_loss(l_ng, l_gg, l_rec, lcfg)
        loss.backward()
        tot += float(loss.data)
        ng += float(l_ng.data)
        gg += float(l_gg.data)
        rec += float(l_rec.data)
    return tot, ng, gg, rec


# -- checkpoint plumbing -------------------------------------------------------

def _shape_meta(cfg: TrainConfig, in_dim: int) -> dict:
    return {
        "in_dim": int(in_dim),
        "hidden": int(cfg.hidden),
        "n_layers": int(cfg.n_layers),
        "n_clusters": int(cfg.n_clusters),
        "head_hidden": int(cfg.head_hidden),
        "head_out": int(cfg.head_out),
        "backbone": cfg.backbone,
    }


def config_dict(cfg: TrainConfig) -> dict:
    """JSON-ready snapshot of the knobs that define a run (paths excluded)."""
    d = asdict(cfg)
    d.pop("checkpoint_path")
    d.pop("log_path")
    return d


def _ckpt_meta(cfg: TrainConfig, in_dim: int) -> dict:
    # shape keys stay at the top level (resume compares them); the full
    # config rides along so downstream commands can rebuild the model setup
    return {**_shape_meta(cfg, in_dim), "config": config_dict(cfg)}


def _write_epoch_checkpoint(cfg: TrainConfig, params, adam: Adam, epoch: int,
                            in_dim: int, written: list[str]) -> None:
    if cfg.checkpoint_path is None:
        return
    direc = os.path.dirname(os.path.abspath(cfg.checkpoint_path))
    os.makedirs(direc, exist_ok=True)
    path = os.path.join(direc, CKPT_PATTERN.format(epoch=epoch))
    save_checkpoint(path, params, seed=cfg.seed, epoch=epoch, step=adam.state.t,
                    adam=adam.state, meta=_ckpt_meta(cfg, in_dim))
    written.append(path)
    while len(written) > cfg.keep_checkpoints:
        stale = written.pop(0)
        if os.path.exists(stale):
            os.remove(stale)


def _write_final(cfg: TrainConfig, params, adam: Adam, epoch: int, in_dim: int) -> None:
    if cfg.checkpoint_path is None:
        return
    direc = os.path.dirname(os.path.abspath(cfg.checkpoint_path))
    os.makedirs(direc, exist_ok=True)
    save_checkpoint(cfg.checkpoint_path, params, seed=cfg.seed, epoch=epoch,
                    step=adam.state.t, adam=adam.state, meta=_ckpt_meta(cfg, in_dim))


# -- training loop -------------------------------------------------------------

def _train(graphs: list[PatientGraph], cfg: TrainConfig,
           params: dict[str, Tensor], adam: Adam, start_epoch: int) -> TrainResult:
    pairs = prepare_inputs(graphs, cfg)
    in_dim = pairs[0][0].shape[1]
    n = len(pairs)
    log = TrainLog()
    written: list[str] = []
    done = start_epoch
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        order = substream(cfg.seed, f"shuffle:{epoch}").permutation(n)
        tot = ng = gg = rec = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = [pairs[i] for i in order[lo:lo + cfg.batch_size]]
            adam.zero_grad()
            try:
                if cfg.negatives_mode == "self_only":
                    bt, bn, bg, br = _self_only_batch_backward(batch, params, cfg)
                else:
                    loss, bn, bg, br = batch_loss(batch, params, cfg)
                    bt = float(loss.data)
                    loss.backward()
            except NumericError as err:
                raise NumericError(
                    f"pretrain aborted at epoch {epoch + 1}, batch {b + 1}: {err}") from err
            if not np.isfinite(bt):
                raise NumericError(
                    f"pretrain aborted at epoch {epoch + 1}, batch {b + 1}: "
                    f"non-finite loss {bt}")
            adam.step()
            tot += bt
            ng += bn
            gg += bg
            rec += br
        log.records.append(EpochRecord(
            epoch=epoch + 1, loss=tot, loss_node_graph=ng, loss_graph_graph=gg,
            loss_recon=rec, seconds=time.perf_counter() - t0))
        _write_epoch_checkpoint(cfg, params, adam, epoch + 1, in_dim, written)
        done = epoch + 1
    _write_final(cfg, params, adam, done, in_dim)
    if cfg.log_path is not None:
        log.write_csv(cfg.log_path)
    return TrainResult(params=params, log=log, adam=adam, epochs_done=done)


def pretrain(graphs: list[PatientGraph], cfg: TrainConfig) -> TrainResult:
    """Train from a fresh initialization for cfg.epochs epochs."""
    pairs = prepare_inputs(graphs, cfg)
    params = init_model_params(cfg.seed, pairs[0][0].shape[1], cfg)
    adam = Adam(params, lr=cfg.lr)
    return _train(graphs, cfg, params, adam, start_epoch=0)


def resume(checkpoint_path, graphs: list[PatientGraph], cfg: TrainConfig) -> TrainResult:
    """Continue a run toward cfg.epochs total epochs from a saved state.

    cfg.epochs is the overall target: a checkpoint written after epoch e
    trains for cfg.epochs - e further epochs (none if already past it).
    The stored seed wins so shuffle streams continue the original run.
    """
    ck = load_checkpoint(checkpoint_path)
    pairs = prepare_inputs(graphs, cfg)
    want = _shape_meta(cfg, pairs[0][0].shape[1])
    have = ck.meta
    bad = [k for k in want if have.get(k) != want[k]]
    if bad:
        detail = ", ".join(f"{k}: checkpoint={have.get(k)!r} vs config={want[k]!r}"
                           for k in bad)
        raise DataError(f"resume: checkpoint shape mismatch ({detail})")
    params = {name: ad.parameter(value, name) for name, value in ck.params.items()}
    adam = Adam(params, lr=cfg.lr)
    adam.state = ck.adam_state()
    return _train(graphs, replace(cfg, seed=ck.seed), params, adam, start_epoch=ck.epoch)
