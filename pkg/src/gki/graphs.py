"""Patient graph construction.

Nodes are medical-event tokens (one-hot over a corpus vocabulary);
directed edges carry elapsed time. Construction per visit t:

  (a) t == 0: demographic node (gender) -> each first-visit diagnosis,
      weight = age in years;
  (b) within a visit: each diagnosis -> each drug, weight = the visit's
      'days' field (first visit included by default, excluded in
      literal mode);
  (c) t > 0: each previous-visit drug -> each current diagnosis,
      weight = admittime_t - dischtime_{t-1} in days, clamped at 0;
  (d) t > 1 and the previous two stays overlap (admittime_{t-1} <
      dischtime_{t-2}): also visit t-2 drugs -> current diagnoses.

Duplicate (src, dst) pairs keep the minimum weight.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DataError
from .records import PatientRecord, assign_label, disease_tag_for

__all__ = [
    "Vocabulary",
    "PatientGraph",
    "build_graph",
    "graph_stats",
    "GraphStats",
    "graph_to_dict",
    "graph_from_dict",
    "write_graphs_jsonl",
    "read_graphs_jsonl",
]

OOV_TOKEN = "<OOV>"


@dataclass
class Vocabulary:
    """Sorted token -> column map with a reserved out-of-vocabulary column."""
    tokens: list[str]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = sorted(self.tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def oov_index(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens) + 1

    def column(self, token: str) -> int:
        return self.index.get(token, self.oov_index)

    @classmethod
    def from_records(cls, records: Iterable[PatientRecord]) -> "Vocabulary":
        tokens: set[str] = set()
        for r in records:
            for v in r.history:
                tokens.add(v.gender)
                tokens.update(v.icd_codes)
                tokens.update(v.drugs)
        return cls(tokens=sorted(tokens))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.strip()]
        return cls(tokens=tokens)


@dataclass
class PatientGraph:
    graph_id: str
    node_tokens: list[str]
    node_features: np.ndarray  # (n, D) one-hot
    edges: list[tuple[int, int, float]]
    label: int | None = None
    disease_tag: str | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_tokens)


def _one_hot(tokens: list[str], vocab: Vocabulary) -> np.ndarray:
    x = np.zeros((len(tokens), vocab.size), dtype=np.float64)
    for i, t in enumerate(tokens):
        x[i, vocab.column(t)] = 1.0
    return x


def build_graph(record: PatientRecord, vocab: Vocabulary,
                *, first_visit_drug_edges: bool = True) -> PatientGraph:
    """Construct one patient graph; see the module docstring for the rules."""
    if not record.history:
        raise DataError(f"patient {record.patient_id}: no visits")
    first = record.history[0]
    if not first.icd_codes:
        raise DataError(
            f"patient {record.patient_id}: first visit has no diagnoses "
            f"(no anchor for the demographic edge)")

    raw: list[tuple[str, str, float]] = []
    for code in first.icd_codes:
        raw.append((first.gender, code, float(first.age)))
    for t, visit in enumerate(record.history):
        if t > 0 or first_visit_drug_edges:
            for code in visit.icd_codes:
                for drug in visit.drugs:
                    raw.append((code, drug, float(visit.days)))
        if t > 0:
            prev = record.history[t - 1]
            gap = max((visit.admittime - prev.dischtime).days, 0)
            for drug in prev.drugs:
                for code in visit.icd_codes:
                    raw.append((drug, code, float(gap)))
            if t > 1:
                prev2 = record.history[t - 2]
                if prev.admittime < prev2.dischtime:
                    gap2 = max((visit.admittime - prev2.dischtime).days, 0)
                    for drug in prev2.drugs:
                        for code in visit.icd_codes:
                            raw.append((drug, code, float(gap2)))

    tokens: list[str] = []
    order: dict[str, int] = {}
    weights: dict[tuple[int, int], float] = {}
    for src_tok, dst_tok, w in raw:
        if src_tok == dst_tok:
            continue  # construction never keeps self-loops
        for tok in (src_tok, dst_tok):
            if tok not in order:
                order[tok] = len(tokens)
                tokens.append(tok)
        key = (order[src_tok], order[dst_tok])
        if key not in weights or w < weights[key]:
            weights[key] = w

    edges = [(s, d, w) for (s, d), w in weights.items()]
    return PatientGraph(
        graph_id=record.patient_id,
        node_tokens=tokens,
        node_features=_one_hot(tokens, vocab),
        edges=edges,
        label=assign_label(record),
        disease_tag=disease_tag_for(record) or None,
    )


@dataclass
class GraphStats:
    count: int
    max_nodes: int
    avg_nodes: float
    max_edges: int
    avg_edges: float


def graph_stats(graphs: list[PatientGraph]) -> GraphStats:
    if not graphs:
        raise DataError("graph_stats: empty graph list")
    nodes = [g.n_nodes for g in graphs]
    edges = [len(g.edges) for g in graphs]
    return GraphStats(
        count=len(graphs),
        max_nodes=max(nodes),
        avg_nodes=sum(nodes) / len(graphs),
        max_edges=max(edges),
        avg_edges=sum(edges) / len(graphs),
    )


# -- serialization -------------------------------------------------------

def graph_to_dict(g: PatientGraph) -> dict:
    return {
        "graph_id": g.graph_id,
        "tokens": list(g.node_tokens),
        "edges": [[s, d, w] for s, d, w in g.edges],
        "label": g.label,
        "disease_tag": g.disease_tag,
    }


def graph_from_dict(obj: dict, vocab: Vocabulary) -> PatientGraph:
    for name in ("graph_id", "tokens", "edges"):
        if name not in obj:
            raise DataError(f"graph record missing required field '{name}'")
    tokens = [str(t) for t in obj["tokens"]]
    edges = [(int(s), int(d), float(w)) for s, d, w in obj["edges"]]
    n = len(tokens)
    for s, d, _ in edges:
        if not (0 <= s < n and 0 <= d < n):
            raise DataError(f"graph {obj['graph_id']}: edge endpoint out of range")
    return PatientGraph(
        graph_id=str(obj["graph_id"]),
        node_tokens=tokens,
        node_features=_one_hot(tokens, vocab),
        edges=edges,
        label=obj.get("label"),
        disease_tag=obj.get("disease_tag"),
    )


def write_graphs_jsonl(graphs: Iterable[PatientGraph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_dict(g), sort_keys=True) + "\n")


def read_graphs_jsonl(path, vocab: Vocabulary) -> list[PatientGraph]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}, line {lineno}: malformed JSON ({e.msg})") from e
            out.append(graph_from_dict(obj, vocab))
    return out
