"""Figure rendering for CLI report paths.

Every command that writes a delimited report also renders the matching
figure next to it: loss curves for pretraining logs, the log-log chord-gap
plot and Gram-eigenvalue scan for the geometry checks, per-fold metric
scatters for evaluations, and landmark-sweep curves.  Figures are rendered
with the Agg backend straight to PNG so runs are headless and repeatable.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)
import numpy as np  # noqa: E402

from .evaluate import EvalReport  # noqa: E402
from .theory import BoundReport, PsdReport  # noqa: E402
from .training import TrainLog  # noqa: E402

FIG_DPI = 120


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def plot_loss_curves(log: TrainLog, path) -> Path:
    """Total loss and its three components per epoch."""
    epochs = [r.epoch for r in log.records]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, [r.loss for r in log.records], label="total", lw=2)
    ax.plot(epochs, [r.loss_node_graph for r in log.records],
            label="node-graph", lw=1)
    ax.plot(epochs, [r.loss_graph_graph for r in log.records],
            label="graph-graph", lw=1)
    ax.plot(epochs, [r.loss_recon for r in log.records],
            label="reconstruction", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.set_title("pretraining loss")
    return _finish(fig, path)


def plot_bound(report: BoundReport, path) -> Path:
    """Arc-minus-chord gap against separation on log-log axes, with the
    fitted power law and the analytic cubic reference."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    keep = report.gap > 0
    m, gap = report.ms[keep], report.gap[keep]
    ax.loglog(m, gap, "o", ms=4, label="measured gap")
    if np.isfinite(report.slope) and m.size >= 2:
        anchor = gap[0] / m[0] ** report.slope
        grid = np.logspace(np.log10(m.min()), np.log10(m.max()), 50)
        ax.loglog(grid, anchor * grid**report.slope, "-",
                  label=f"fit, slope {report.slope:.3f}")
    grid = np.logspace(np.log10(max(m.min(), 1e-4)), np.log10(m.max()), 50)
    ax.loglog(grid, grid**3 / (24.0 * report.radius**2), "--",
              label="m^3 / 24rho^2")
    ax.set_xlabel("geodesic separation m")
    ax.set_ylabel("d_S - d_E")
    ax.legend()
    ax.set_title("chord-vs-arc error law")
    return _finish(fig, path)


def plot_psd(reports: list[PsdReport], path) -> Path:
    """Minimum Gram eigenvalue per check, against the pass threshold."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    by_kind: dict[str, list[PsdReport]] = {}
    for r in reports:
        by_kind.setdefault(r.kind, []).append(r)
    for kind, rs in sorted(by_kind.items()):
        ax.plot([r.n_points for r in rs], [r.min_eigenvalue for r in rs],
                "o", ms=5, label=kind)
    if reports:
        ax.axhline(reports[0].threshold, color="red", lw=1, ls="--",
                   label="pass threshold")
    ax.set_xlabel("points in Gram matrix")
    ax.set_ylabel("min eigenvalue")
    ax.set_yscale("symlog", linthresh=1e-8)
    ax.legend()
    ax.set_title("kernel positive-semidefiniteness")
    return _finish(fig, path)


def plot_eval_report(report: EvalReport, path) -> Path:
    """Per-fold metric values with the mean drawn per metric."""
    metrics = (["auroc", "f1_macro"] if report.task == "classify"
               else ["p_at_1", "p_at_10"])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i, metric in enumerate(metrics):
        vals = report.metric_values(metric)
        if not vals:
            continue
        x = np.full(len(vals), float(i))
        ax.plot(x, vals, "o", ms=4, alpha=0.6)
        ax.hlines(float(np.mean(vals)), i - 0.25, i + 0.25, color="black", lw=2)
    ax.set_xticks(range(len(metrics)))
    ax.set_xticklabels(metrics)
    ax.set_ylabel("score")
    ax.set_title(f"{report.task}: {report.repeats}x{report.folds} cross-validation")
    return _finish(fig, path)


def plot_sweep(rows: list[dict], metric: str, path) -> Path:
    """Mean metric vs landmark count, one curve per multiplier mode."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    modes = sorted({r["pinv_mode"] for r in rows})
    for mode in modes:
        pts = sorted((r["n_clusters"], r["mean"], r["std"])
                     for r in rows if r["pinv_mode"] == mode)
        ks = [p[0] for p in pts]
        ax.errorbar(ks, [p[1] for p in pts], yerr=[p[2] for p in pts],
                    marker="o", ms=4, capsize=3, label=mode)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("landmarks K")
    ax.set_ylabel(f"mean {metric}")
    ax.legend()
    ax.set_title("landmark sweep")
    return _finish(fig, path)
