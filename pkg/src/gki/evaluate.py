"""Frozen-feature evaluation: embeddings, linear probes, similarity search.

Embeddings concatenate the Euclidean and spherical graph summaries (length
2*K*L); projection heads never enter this path.  Downstream scoring is
deliberately self-contained: logistic regression is fit by deterministic
full-batch gradient descent with Armijo backtracking on features z-scored
per training fold, AUROC uses midranks, and stratified repeated
cross-validation is seeded, so every number the suite produces is
reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import aggregation_matrix, encoder_forward
from .errors import DataError
from .graphs import PatientGraph
from .kernels import graph_map
from .rng import substream
from .training import TrainConfig

C_GRID = tuple(50.0 ** e for e in range(-4, 5))

LR_MAX_ITER = 500
LR_TOL = 1e-8


@dataclass
class Embedding:
    graph_id: str
    vector: np.ndarray
    label: int | None = None
    disease_tag: str | None = None


# -- embedding extraction ------------------------------------------------------

def embed(params, graphs: list[PatientGraph], cfg: TrainConfig) -> list[Embedding]:
    """Per graph: encoder forward, both kernel graph summaries, concatenated."""
    in_dim = params["enc.0.W"].data.shape[0]
    cs = [params[f"cent.{l}"] for l in range(cfg.n_layers)]
    kcfg = cfg.kernel_config()
    out = []
    for g in graphs:
        if g.node_features.shape[1] != in_dim:
            raise DataError(
                f"embed: graph {g.graph_id!r} has feature dim "
                f"{g.node_features.shape[1]}, encoder expects {in_dim}")
        a_hat = aggregation_matrix(g, cfg.backbone, cfg.adjacency, cfg.transform)
        hs = encoder_forward(g.node_features, a_hat, params, cfg.n_layers, cfg.backbone)
        phi_e = graph_map(hs, cs, "euclidean", kcfg)
        phi_s = graph_map(hs, cs, "spherical", kcfg)
        vec = np.concatenate([phi_e.data.ravel(), phi_s.data.ravel()])
        if not np.isfinite(vec).all():
            raise DataError(f"embed: non-finite embedding for graph {g.graph_id!r}")
        out.append(Embedding(graph_id=g.graph_id, vector=vec,
                             label=g.label, disease_tag=g.disease_tag))
    return out


def write_embeddings_jsonl(path, embeddings: list[Embedding]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in embeddings:
            fh.write(json.dumps({
                "graph_id": e.graph_id,
                "vector": [float(v) for v in e.vector],
                "label": e.label,
                "disease_tag": e.disease_tag,
            }, sort_keys=True) + "\n")


def read_embeddings_jsonl(path) -> list[Embedding]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                out.append(Embedding(graph_id=row["graph_id"],
                                     vector=np.asarray(row["vector"], dtype=np.float64),
                                     label=row.get("label"),
                                     disease_tag=row.get("disease_tag")))
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise DataError(f"embeddings line {lineno}: {err}") from err
    return out


# -- logistic regression -------------------------------------------------------

@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    c: float
    n_iter: int
    converged: bool


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(x: np.ndarray, y: np.ndarray, c: float = 1.0) -> LogisticModel:
    """L2-penalized logistic regression (intercept unpenalized), solved by
    full-batch gradient descent with Armijo backtracking from a zero start."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"fit_logistic: X {x.shape} does not match y {y.shape}")
    classes = np.unique(y)
    if classes.size < 2:
        raise DataError("fit_logistic: training fold contains a single class")
    if not np.array_equal(classes, [0.0, 1.0]):
        raise DataError(f"fit_logistic: labels must be 0/1, got {classes}")
    if not c > 0:
        raise DataError(f"fit_logistic: C must be > 0, got {c}")
    n, d = x.shape
    sign = 2.0 * y - 1.0  # +-1

    def objective(w, b):
        z = sign * (x @ w + b)
        return float(np.logaddexp(0.0, -z).sum() + (w @ w) / (2.0 * c))

    def gradient(w, b):
        p = _sigmoid(x @ w + b)
        r = p - y
        return x.T @ r + w / c, float(r.sum())

    w = np.zeros(d)
    b = 0.0
    value = objective(w, b)
    n_iter = 0
    converged = False
    step = 1.0
    for n_iter in range(1, LR_MAX_ITER + 1):
        gw, gb = gradient(w, b)
        gsq = float(gw @ gw + gb * gb)
        if np.sqrt(gsq) < LR_TOL:
            converged = True
            break
        # warm-started backtracking: grow the last accepted step once, then halve
        step = min(2.0 * step, 1.0)
        while step > 1e-16:
            cand_w = w - step * gw
            cand_b = b - step * gb
            cand = objective(cand_w, cand_b)
            if cand <= value - 1e-4 * step * gsq:
                break
            step *= 0.5
        if step <= 1e-16:
            break  # no descent step representable; stop at the current point
        w, b, value = cand_w, cand_b, cand
    return LogisticModel(weights=w, intercept=b, c=c, n_iter=n_iter, converged=converged)


def predict_proba(model: LogisticModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _sigmoid(x @ model.weights + model.intercept)


# -- similarity search ---------------------------------------------------------

def knn_search(query: Embedding, corpus: list[Embedding], k: int) -> list[str]:
    """Top-k corpus ids by inner product, ties broken by ascending graph_id.

    Entries sharing the query's graph_id are ignored; k beyond the corpus
    size returns the full ranking.
    """
    if k < 1:
        raise DataError(f"knn_search: k must be >= 1, got {k}")
    scored = [(-float(e.vector @ query.vector), e.graph_id)
              for e in corpus if e.graph_id != query.graph_id]
    scored.sort()
    return [gid for _, gid in scored[:k]]


def precision_at_k(queries: list[Embedding], corpus: list[Embedding], k: int) -> float:
    """Mean over queries of the same-disease_tag fraction among top-k hits."""
    if not queries:
        raise DataError("precision_at_k: no queries")
    tags = {e.graph_id: e.disease_tag for e in corpus}
    fractions = []
    for q in queries:
        if q.disease_tag is None:
            raise DataError(f"precision_at_k: query {q.graph_id!r} has no disease_tag")
        hits = knn_search(q, corpus, k)
        if not hits:
            raise DataError("precision_at_k: empty corpus after removing the query")
        match = sum(1 for gid in hits if tags[gid] == q.disease_tag)
        fractions.append(match / len(hits))
    return float(np.mean(fractions))


# -- metrics --------------------------------------------------------------------

def metric_auroc(scores, labels) -> float:
    """Rank-statistic AUROC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape or scores.size == 0:
        raise DataError("metric_auroc: scores and labels must align and be nonempty")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(scores.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("metric_auroc: both classes must be present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[pos].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def metric_f1_macro(predicted, truth, classes=None) -> float:
    """Unweighted mean of per-class F1; a class with no support and no
    predictions contributes 0."""
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.shape != truth.shape or truth.size == 0:
        raise DataError("metric_f1_macro: inputs must align and be nonempty")
    if classes is None:
        classes = sorted(set(truth.tolist()) | set(predicted.tolist()))
    f1s = []
    for cls in classes:
        tp = int(((predicted == cls) & (truth == cls)).sum())
        fp = int(((predicted == cls) & (truth != cls)).sum())
        fn = int(((predicted != cls) & (truth == cls)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(f1s))


# -- repeated stratified cross-validation ---------------------------------------

@dataclass
class FoldRecord:
    repeat: int
    fold: int
    auroc: float = float("nan")
    f1_macro: float = float("nan")
    p_at_1: float = float("nan")
    p_at_10: float = float("nan")
    chosen_c: float = float("nan")
    skipped: bool = False
    reason: str = ""


@dataclass
class EvalReport:
    task: str
    repeats: int
    folds: int
    records: list[FoldRecord] = field(default_factory=list)

    CSV_HEADER = "repeat,fold,auroc,f1_macro,p_at_1,p_at_10,chosen_c,skipped,reason"

    def metric_values(self, name: str) -> list[float]:
        vals = [getattr(r, name) for r in self.records
                if not r.skipped and np.isfinite(getattr(r, name))]
        return vals

    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in ("auroc", "f1_macro", "p_at_1", "p_at_10"):
            vals = self.metric_values(name)
            if vals:
                out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                             "n_folds": len(vals)}
        return out

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.repeat},{r.fold},{r.auroc:.17g},{r.f1_macro:.17g},"
                f"{r.p_at_1:.17g},{r.p_at_10:.17g},{r.chosen_c:.17g},"
                f"{int(r.skipped)},{r.reason}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "task": self.task,
            "repeats": self.repeats,
            "folds": self.folds,
            "aggregate": self.aggregate(),
            "records": [vars(r) for r in self.records],
        }, sort_keys=True, indent=2) + "\n"


def _stratified_folds(labels: np.ndarray, folds: int, rng) -> np.ndarray:
    """Fold index per sample: each class shuffled then dealt round-robin."""
    assign = np.empty(labels.shape[0], dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        assign[idx] = np.arange(idx.size) % folds
    return assign


def _zscore_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean/std for fold-local standardization; constant columns get
    std 1 so they pass through centered instead of dividing by zero."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return mu, np.where(sd > 0.0, sd, 1.0)


def _select_c(x: np.ndarray, y: np.ndarray, rng) -> float:
    """Inner 3-fold AUROC over the C grid; first best wins, fallback C=1."""
    inner = _stratified_folds(y, 3, rng)
    best_c, best_score = 1.0, -np.inf
    for c in C_GRID:
        scores = []
        for f in range(3):
            tr, te = inner != f, inner == f
            if np.unique(y[tr]).size < 2 or np.unique(y[te]).size < 2:
                continue
            mu, sd = _zscore_stats(x[tr])
            model = fit_logistic((x[tr] - mu) / sd, y[tr], c)
            scores.append(metric_auroc(
                predict_proba(model, (x[te] - mu) / sd), y[te]))
        if scores and float(np.mean(scores)) > best_score:
            best_score = float(np.mean(scores))
            best_c = c
    return best_c


def repeated_cv(embeddings: list[Embedding], task: str = "classify",
                repeats: int = 5, folds: int = 10, seed: int = 0,
                k_list: tuple[int, ...] = (1, 10)) -> EvalReport:
    """Seeded stratified repeats x folds evaluation of frozen embeddings."""
    if task not in ("classify", "similarity"):
        raise DataError(f"repeated_cv: unknown task {task!r}")
    if repeats < 1 or folds < 2:
        raise DataError("repeated_cv: need repeats >= 1 and folds >= 2")
    if not embeddings:
        raise DataError("repeated_cv: no embeddings")
    x = np.stack([e.vector for e in embeddings])
    labels = np.asarray([e.label for e in embeddings])
    if any(e.label is None for e in embeddings):
        raise DataError("repeated_cv: every embedding needs a label")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise DataError("repeated_cv: cannot stratify a single-class dataset")
    short = [(c, int(n)) for c, n in zip(classes, counts) if n < folds]
    if short:
        detail = ", ".join(f"class {c!r} has {n}" for c, n in short)
        raise DataError(
            f"repeated_cv: each class needs at least {folds} samples; {detail}")
    report = EvalReport(task=task, repeats=repeats, folds=folds)
    for r in range(repeats):
        assign = _stratified_folds(labels, folds, substream(seed, f"cv:repeat{r}"))
        for f in range(folds):
            rec = FoldRecord(repeat=r, fold=f)
            te = assign == f
            tr = ~te
            if task == "classify":
                if np.unique(labels[tr]).size < 2:
                    rec.skipped, rec.reason = True, "single-class training fold"
                elif np.unique(labels[te]).size < 2:
                    rec.skipped, rec.reason = True, "single-class test fold"
                else:
                    # kernel-histogram coordinates span orders of magnitude, so
                    # the probe standardizes by training-fold statistics
                    mu, sd = _zscore_stats(x[tr])
                    xtr = (x[tr] - mu) / sd
                    xte = (x[te] - mu) / sd
                    c = _select_c(xtr, labels[tr],
                                  substream(seed, f"cv:repeat{r}:fold{f}:inner"))
                    model = fit_logistic(xtr, labels[tr], c)
                    prob = predict_proba(model, xte)
                    rec.chosen_c = c
                    rec.auroc = metric_auroc(prob, labels[te])
                    rec.f1_macro = metric_f1_macro(
                        (prob >= 0.5).astype(int), labels[te], classes=[0, 1])
            else:
                queries = [embeddings[i] for i in np.flatnonzero(te)]
                corpus = [embeddings[i] for i in np.flatnonzero(tr)]
                for k in k_list:
                    value = precision_at_k(queries, corpus, k)
                    if k == 1:
                        rec.p_at_1 = value
                    elif k == 10:
                        rec.p_at_10 = value
            report.records.append(rec)
    return report
