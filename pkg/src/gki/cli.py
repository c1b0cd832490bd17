"""Command-line pipeline driver.

Subcommands chain the library stages end to end:

  synth          write a synthetic patient cohort (JSON lines)
  build-graphs   turn cohort records into patient graphs plus vocabulary
  pretrain       self-supervised training; checkpoint, loss log, figure
  embed          graph-level embeddings from a checkpoint (JSON lines)
  eval-classify  stratified repeated-CV logistic probe; CSV/JSON, figure
  eval-similar   k-NN retrieval probe; CSV/JSON, figure
  verify-theory  geometry checks; CSV/JSON, figures, PSD pass lines
  sweep          landmark-count x multiplier-mode grid; CSV, figure

Every command writes a RunManifest (merged config snapshot, seed, sha256
of each input file, output paths, wall time) next to its outputs.  Config
precedence: built-in defaults < --config JSON file < explicit flags.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error;
failures print one `gki: error: <kind>: <message>` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint
from .errors import DataError, NumericError
from .evaluate import embed, read_embeddings_jsonl, repeated_cv, write_embeddings_jsonl
from .graphs import (
    Vocabulary,
    build_graph,
    graph_stats,
    read_graphs_jsonl,
    write_graphs_jsonl,
)
from .records import (
    iter_jsonl_file,
    parse_records,
    synthesize_cohort,
    write_records_jsonl,
)
from .reporting import (
    plot_bound,
    plot_eval_report,
    plot_loss_curves,
    plot_psd,
    plot_sweep,
)
from .rng import substream
from .theory import sample_sphere_pairs, verify_psd, verify_theorem1
from .training import TrainConfig, config_dict, pretrain, resume

PSD_SEEDS = 20
PSD_SIZES = (8, 32, 64)
PSD_DIM = 5
BOUND_GRID = tuple(float(m) for m in np.logspace(-3, -1, 12))

# flag name -> (type, choices, help); one flag per tunable TrainConfig field
_CFG_FLAGS: dict[str, tuple[type, tuple | None, str]] = {
    "seed": (int, None, "RNG seed for every derived stream"),
    "epochs": (int, None, "training epochs (total target when resuming)"),
    "batch_size": (int, None, "graphs per optimization step"),
    "lr": (float, None, "Adam learning rate"),
    "n_layers": (int, None, "encoder depth"),
    "hidden": (int, None, "encoder layer width"),
    "n_clusters": (int, None, "landmark/centroid count per layer"),
    "tau": (float, None, "contrastive temperature"),
    "pinv_mode": (str, ("identity", "pinv", "pinv_sqrt"),
                  "feature-map multiplier mode"),
    "negatives_mode": (str, ("batch", "self_only"), "contrastive negatives"),
    "transform": (str, ("raw", "log1p"), "edge-weight transform"),
    "backbone": (str, ("gcn", "gin"), "encoder backbone"),
    "adjacency": (str, ("symmetric", "directed"), "adjacency normalization"),
    "head_hidden": (int, None, "projection-head hidden width"),
    "head_out": (int, None, "projection-head output width"),
    "w_node_graph": (float, None, "node-graph loss weight"),
    "w_graph_graph": (float, None, "graph-graph loss weight"),
    "w_recon": (float, None, "reconstruction loss weight"),
    "kernel_radius": (float, None, "sphere radius for the geodesic kernel"),
    "kernel_eps": (float, None, "arccos clamp for the geodesic kernel"),
    "keep_checkpoints": (int, None, "rotating epoch checkpoints to keep"),
}


# -- manifest -------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str]
    outputs: list[str]
    wall_time_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        blob = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time_seconds": self.wall_time_seconds,
        }
        blob.update(self.extra)
        return json.dumps(blob, sort_keys=True, indent=2) + "\n"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command: str, config: dict, seed: int | None,
                    inputs, outputs, t0: float, **extra) -> Path:
    manifest = RunManifest(
        command=command, config=config, seed=seed,
        inputs={str(p): _sha256(p) for p in inputs},
        outputs=[str(p) for p in outputs],
        wall_time_seconds=time.perf_counter() - t0,
        extra=extra)
    path = Path(path)
    path.write_text(manifest.to_json(), encoding="utf-8")
    return path


# -- config merging -------------------------------------------------------------

def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"config {path}: malformed JSON ({e.msg})") from e
    if not isinstance(blob, dict):
        raise DataError(f"config {path}: top level must be a JSON object")
    return blob


def merge_train_config(args, base: dict | None = None) -> dict:
    """defaults < config file < explicit flags; returns the merged dict."""
    merged = dict(base) if base is not None else config_dict(TrainConfig())
    config_path = getattr(args, "config", None)
    if config_path is not None:
        file_cfg = _load_config_file(config_path)
        unknown = sorted(set(file_cfg) - set(merged))
        if unknown:
            raise DataError(f"config {config_path}: unknown keys {unknown}")
        for key, value in file_cfg.items():
            want = type(merged[key])
            try:
                file_cfg[key] = want(value)
            except (TypeError, ValueError) as e:
                raise DataError(
                    f"config {config_path}: key {key!r} expects {want.__name__}, "
                    f"got {value!r}") from e
        merged.update(file_cfg)
    provided = {k: v for k, v in vars(args).items() if k in _CFG_FLAGS}
    merged.update(provided)
    return merged


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    defaults = config_dict(TrainConfig())
    parser.add_argument("--config", metavar="PATH",
                        help="flat JSON config file; flags override its values")
    for name, (typ, choices, text) in _CFG_FLAGS.items():
        parser.add_argument(
            f"--{name.replace('_', '-')}", dest=name, type=typ, choices=choices,
            default=argparse.SUPPRESS, help=f"{text} (default: {defaults[name]})")


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _out_dir(arg) -> Path:
    out = Path(arg)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_graph_dir(in_dir) -> tuple[list, Path, Path]:
    graphs_path = _require_file(Path(in_dir) / "graphs.jsonl", "graphs file")
    vocab_path = _require_file(Path(in_dir) / "vocab.txt", "vocabulary file")
    vocab = Vocabulary.load(vocab_path)
    return read_graphs_jsonl(graphs_path, vocab), graphs_path, vocab_path


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    records = synthesize_cohort(args.seed, args.n)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_records_jsonl(records, out)
    _write_manifest(out.with_suffix(".manifest.json"), "synth",
                    {"n": args.n, "seed": args.seed}, args.seed, [], [out], t0)
    print(f"wrote {out} ({len(records)} records)")
    return 0


def cmd_build_graphs(args) -> int:
    t0 = time.perf_counter()
    in_path = _require_file(args.in_path, "cohort file")
    records = parse_records(iter_jsonl_file(in_path))
    vocab = Vocabulary.from_records(records)
    first_visit = not args.no_first_visit_drug_edges
    graphs = [build_graph(r, vocab, first_visit_drug_edges=first_visit)
              for r in records]
    out = _out_dir(args.out)
    graphs_path = out / "graphs.jsonl"
    vocab_path = out / "vocab.txt"
    write_graphs_jsonl(graphs, graphs_path)
    vocab.save(vocab_path)
    stats = graph_stats(graphs)
    _write_manifest(out / "manifest.json", "build-graphs",
                    {"first_visit_drug_edges": first_visit}, None,
                    [in_path], [graphs_path, vocab_path], t0,
                    stats=vars(stats))
    print(f"wrote {graphs_path} ({stats.count} graphs, vocab {vocab.size}, "
          f"avg {stats.avg_nodes:.1f} nodes / {stats.avg_edges:.1f} edges)")
    return 0


def cmd_pretrain(args) -> int:
    t0 = time.perf_counter()
    graphs, graphs_path, vocab_path = _load_graph_dir(args.in_path)
    merged = merge_train_config(args)
    out = _out_dir(args.out)
    ckpt_path = out / "model.gki"
    log_path = out / "training.csv"
    cfg = TrainConfig(**merged, checkpoint_path=str(ckpt_path),
                      log_path=str(log_path))
    inputs = [graphs_path, vocab_path]
    if args.config:
        inputs.append(_require_file(args.config, "config file"))
    if args.resume:
        inputs.append(_require_file(args.resume, "resume checkpoint"))
        result = resume(args.resume, graphs, cfg)
    else:
        result = pretrain(graphs, cfg)
    fig_path = plot_loss_curves(result.log, out / "loss_curves.png")
    _write_manifest(out / "manifest.json", "pretrain", merged, cfg.seed,
                    inputs, [ckpt_path, log_path, fig_path], t0,
                    epochs_done=result.epochs_done)
    if result.log.records:
        print(f"wrote {ckpt_path} (epoch {result.epochs_done}, "
              f"loss {result.log.records[-1].loss:.6g})")
    else:
        print(f"wrote {ckpt_path} (epoch {result.epochs_done}, no new epochs)")
    return 0


def cmd_embed(args) -> int:
    t0 = time.perf_counter()
    graphs, graphs_path, vocab_path = _load_graph_dir(args.in_path)
    ckpt_path = _require_file(args.ckpt, "checkpoint")
    ck = load_checkpoint(ckpt_path)
    base = ck.meta.get("config") or config_dict(TrainConfig())
    merged = merge_train_config(args, base=base)
    cfg = TrainConfig(**merged)
    params = {name: Tensor(value) for name, value in ck.params.items()}
    embeddings = embed(params, graphs, cfg)
    out = _out_dir(args.out)
    emb_path = out / "embeddings.jsonl"
    write_embeddings_jsonl(emb_path, embeddings)
    inputs = [graphs_path, vocab_path, ckpt_path]
    if args.config:
        inputs.append(_require_file(args.config, "config file"))
    _write_manifest(out / "manifest.json", "embed", merged, cfg.seed,
                    inputs, [emb_path], t0)
    dim = len(embeddings[0].vector) if embeddings else 0
    print(f"wrote {emb_path} ({len(embeddings)} embeddings, dim {dim})")
    return 0


def _run_eval(args, task: str) -> int:
    t0 = time.perf_counter()
    emb_path = _require_file(args.in_path, "embeddings file")
    embeddings = read_embeddings_jsonl(emb_path)
    k_list = (1, 10)
    report = repeated_cv(embeddings, task=task, repeats=args.repeats,
                         folds=args.folds, seed=args.seed, k_list=k_list)
    out = _out_dir(args.out)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    json_path.write_text(report.to_json(), encoding="utf-8")
    fig_path = plot_eval_report(report, out / "fold_metrics.png")
    command = "eval-classify" if task == "classify" else "eval-similar"
    config = {"task": task, "repeats": args.repeats, "folds": args.folds,
              "seed": args.seed, "k_list": list(k_list)}
    _write_manifest(out / "manifest.json", command, config, args.seed,
                    [emb_path], [csv_path, json_path, fig_path], t0,
                    aggregate=report.aggregate())
    parts = []
    for metric, agg in sorted(report.aggregate().items()):
        parts.append(f"{metric} {agg['mean']:.4f}+/-{agg['std']:.4f}")
    print(f"wrote {csv_path} ({'; '.join(parts)}; {len(report.records)} folds)")
    return 0


def cmd_eval_classify(args) -> int:
    return _run_eval(args, "classify")


def cmd_eval_similar(args) -> int:
    return _run_eval(args, "similarity")


def cmd_verify_theory(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args.out)
    sample = sample_sphere_pairs(args.seed, 1.0, PSD_DIM, BOUND_GRID)
    bound = verify_theorem1(sample)
    bound_csv = out / "bound.csv"
    bound_json = out / "bound_summary.json"
    bound_csv.write_text(bound.to_csv(), encoding="utf-8")
    bound_json.write_text(bound.summary_json(), encoding="utf-8")
    bound_fig = plot_bound(bound, out / "bound_loglog.png")
    print(f"BOUND pairs={bound.ms.size} slope={bound.slope:.4f} "
          f"{'PASS' if bound.passed else 'FAIL'}")

    psd_reports = []
    psd_rows = ["kind,n_points,seed,min_eigenvalue,passed"]
    failures = [] if bound.passed else ["bound"]
    for kind in ("euclidean", "spherical"):
        for n in PSD_SIZES:
            worst = np.inf
            for i in range(PSD_SEEDS):
                rng = substream(args.seed, f"psd:{kind}:{n}:{i}")
                pts = rng.normal(size=(n, PSD_DIM))
                if kind == "spherical":
                    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
                rep = verify_psd(pts, kind)
                psd_reports.append(rep)
                psd_rows.append(f"{kind},{n},{i},{rep.min_eigenvalue:.17g},"
                                f"{rep.passed}")
                worst = min(worst, rep.min_eigenvalue)
                if not rep.passed:
                    failures.append(f"psd:{kind}:{n}:{i}")
            print(f"PSD {kind} n={n} seeds={PSD_SEEDS} worst_min_eig={worst:.3e} "
                  f"{'PASS' if worst >= -1e-8 else 'FAIL'}")
    psd_csv = out / "psd.csv"
    psd_csv.write_text("\n".join(psd_rows) + "\n", encoding="utf-8")
    psd_fig = plot_psd(psd_reports, out / "psd_min_eigs.png")
    config = {"seed": args.seed, "grid": list(BOUND_GRID), "dim": PSD_DIM,
              "psd_seeds": PSD_SEEDS, "psd_sizes": list(PSD_SIZES)}
    _write_manifest(out / "manifest.json", "verify-theory", config, args.seed,
                    [], [bound_csv, bound_json, bound_fig, psd_csv, psd_fig], t0)
    if failures:
        raise NumericError(f"verify-theory: checks failed: {', '.join(failures)}")
    print(f"wrote {bound_csv} and {psd_csv}")
    return 0


SWEEP_CSV_HEADER = ("n_clusters,pinv_mode,auroc_mean,auroc_std,"
                    "f1_macro_mean,f1_macro_std,n_folds")


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    graphs, graphs_path, vocab_path = _load_graph_dir(args.in_path)
    merged = merge_train_config(args)
    inputs = [graphs_path, vocab_path]
    if args.config:
        inputs.append(_require_file(args.config, "config file"))
    out = _out_dir(args.out)
    rows = []
    csv_lines = [SWEEP_CSV_HEADER]
    for mode in args.pinv_modes:
        for k in args.k_list:
            cfg = TrainConfig(**{**merged, "n_clusters": k, "pinv_mode": mode})
            result = pretrain(graphs, cfg)
            embeddings = embed(result.params, graphs, cfg)
            report = repeated_cv(embeddings, task="classify",
                                 repeats=args.repeats, folds=args.folds,
                                 seed=cfg.seed)
            agg = report.aggregate()
            auroc = agg.get("auroc", {"mean": float("nan"), "std": float("nan")})
            f1 = agg.get("f1_macro", {"mean": float("nan"), "std": float("nan")})
            n_folds = auroc.get("n_folds", 0)
            csv_lines.append(
                f"{k},{mode},{auroc['mean']:.17g},{auroc['std']:.17g},"
                f"{f1['mean']:.17g},{f1['std']:.17g},{n_folds}")
            rows.append({"n_clusters": k, "pinv_mode": mode,
                         "mean": auroc["mean"], "std": auroc["std"]})
            print(f"sweep n_clusters={k} pinv_mode={mode} "
                  f"auroc={auroc['mean']:.4f}+/-{auroc['std']:.4f}")
    csv_path = out / "sweep.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    fig_path = plot_sweep(rows, "auroc", out / "sweep_auroc.png")
    config = {**merged, "k_list": list(args.k_list),
              "pinv_modes": list(args.pinv_modes),
              "repeats": args.repeats, "folds": args.folds}
    _write_manifest(out / "manifest.json", "sweep", config, merged["seed"],
                    inputs, [csv_path, fig_path], t0)
    print(f"wrote {csv_path} ({len(rows)} configurations)")
    return 0


# -- parser ---------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _mode_list(text: str) -> list[str]:
    values = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in values if v not in ("identity", "pinv", "pinv_sqrt")]
    if bad or not values:
        raise argparse.ArgumentTypeError(
            f"modes must come from identity,pinv,pinv_sqrt; got {text!r}")
    return values


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--repeats", type=int, default=5,
                   help="CV repeats (default: %(default)s)")
    p.add_argument("--folds", type=int, default=10,
                   help="CV folds (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0,
                   help="fold-assignment seed (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gki",
        description="Self-supervised kernel-view pretraining pipeline for "
                    "patient event graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic patient cohort")
    p.add_argument("--seed", type=int, default=0,
                   help="cohort RNG seed (default: %(default)s)")
    p.add_argument("--n", type=int, default=200,
                   help="number of patients (default: %(default)s)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graphs", help="cohort records -> patient graphs")
    p.add_argument("--in", dest="in_path", required=True, help="cohort JSONL path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-first-visit-drug-edges", action="store_true",
                   help="drop first-visit diagnosis->drug edges "
                        "(literal event-ordering mode; default: keep them)")
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("pretrain", help="self-supervised training")
    p.add_argument("--in", dest="in_path", required=True,
                   help="graph directory from build-graphs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from "
                                    "(trains up to --epochs total)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="graph embeddings from a checkpoint")
    p.add_argument("--in", dest="in_path", required=True,
                   help="graph directory from build-graphs")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval-classify", help="logistic probe with repeated CV")
    p.add_argument("--in", dest="in_path", required=True,
                   help="embeddings JSONL path")
    p.add_argument("--out", required=True, help="output directory")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_eval_classify)

    p = sub.add_parser("eval-similar", help="k-NN retrieval probe (p@1, p@10)")
    p.add_argument("--in", dest="in_path", required=True,
                   help="embeddings JSONL path")
    p.add_argument("--out", required=True, help="output directory")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_eval_similar)

    p = sub.add_parser("verify-theory", help="geometry and kernel checks")
    p.add_argument("--seed", type=int, default=0,
                   help="sampling seed (default: %(default)s)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("sweep", help="landmark-count x multiplier-mode grid")
    p.add_argument("--in", dest="in_path", required=True,
                   help="graph directory from build-graphs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k-list", type=_int_list,
                   default=[16, 32, 64, 128, 256, 512],
                   help="landmark counts (default: 16,32,64,128,256,512)")
    p.add_argument("--pinv-modes", type=_mode_list,
                   default=["identity", "pinv", "pinv_sqrt"],
                   help="multiplier modes (default: identity,pinv,pinv_sqrt)")
    p.add_argument("--repeats", type=int, default=5,
                   help="CV repeats per configuration (default: %(default)s)")
    p.add_argument("--folds", type=int, default=10,
                   help="CV folds per configuration (default: %(default)s)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        name = e.filename if e.filename else e
        print(f"gki: error: data: missing file: {name}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"gki: error: data: {' '.join(str(e).split())}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"gki: error: numeric: {' '.join(str(e).split())}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
