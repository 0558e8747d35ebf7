"""Render figures from run and sweep CSV outputs.

Figures land next to the delimited files they were read from, so a run
directory stays self-contained: metrics.csv plus losses.png/usage.png,
and a sweep directory gains accuracy/perplexity plots over its cells.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _read_csv(path: Path) -> list[dict]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


def render_run_figures(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Loss decomposition and prototype-usage curves from metrics.csv."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    rows = _read_csv(run_dir / "metrics.csv")
    epochs = [int(r["epoch"]) for r in rows]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [float(r["total_loss"]) for r in rows], label="total")
    ax.plot(epochs, [float(r["consistency_loss"]) for r in rows], label="consistency")
    ax.plot(epochs, [float(r["kl_value"]) for r in rows], label="kl")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax2 = ax.twinx()
    ax2.plot(epochs, [float(r["lambda_weight"]) for r in rows],
             color="gray", linestyle="--", label="lambda")
    ax2.set_ylabel("lambda")
    fig.tight_layout()
    path = out_dir / "losses.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [float(r["perplexity"]) for r in rows], label="usage perplexity")
    k = int(rows[0]["num_prototypes"]) if rows else 0
    if k:
        ax.axhline(0.05 * k, color="red", linestyle=":", label="collapse threshold")
    ax.set_xlabel("epoch")
    ax.set_ylabel("perplexity")
    ax.legend(loc="center right")
    ax2 = ax.twinx()
    ax2.plot(epochs, [float(r["max_cluster_share"]) for r in rows],
             color="gray", linestyle="--", label="max share")
    ax2.set_ylabel("max cluster share")
    fig.tight_layout()
    path = out_dir / "usage.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_sweep_figures(sweep_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Probe accuracy and final perplexity across sweep cells from summary.csv."""
    sweep_dir = Path(sweep_dir)
    out_dir = Path(out_dir) if out_dir else sweep_dir
    rows = _read_csv(sweep_dir / "summary.csv")
    labels = [r["value"] for r in rows]
    xs = range(len(rows))
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, [float(r["top1_mean"]) for r in rows],
                yerr=[float(r["top1_std"]) for r in rows],
                marker="o", capsize=3)
    ax.set_xticks(list(xs), labels)
    ax.set_xlabel(rows[0]["key"] if rows else "cell")
    ax.set_ylabel("probe top-1")
    fig.tight_layout()
    path = out_dir / "sweep_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, [float(r["perplexity_mean"]) for r in rows],
                yerr=[float(r["perplexity_std"]) for r in rows],
                marker="s", capsize=3, color="darkorange")
    ax.set_xticks(list(xs), labels)
    ax.set_xlabel(rows[0]["key"] if rows else "cell")
    ax.set_ylabel("final usage perplexity")
    fig.tight_layout()
    path = out_dir / "sweep_perplexity.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_path(path: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Detect whether ``path`` is a run or a sweep directory and render it."""
    path = Path(path)
    written = []
    if (path / "metrics.csv").is_file():
        written += render_run_figures(path, out_dir)
    if (path / "summary.csv").is_file():
        written += render_sweep_figures(path, out_dir)
    return written
