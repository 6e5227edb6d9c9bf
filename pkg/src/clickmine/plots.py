"""Figure rendering for the reporting commands.

Kept separate from the computation modules: the pipeline emits plot-ready
data regardless, and these helpers turn the same rows into PNG files next
to them.  Rendering is deterministic (fixed sizes, Agg backend, no
timestamps), so report directories stay byte-stable across reruns.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from clickmine.motifs import MotifReport  # noqa: E402
from clickmine.stats import ecdf  # noqa: E402

ALGO_ORDER = ("skr", "dp", "dt", "ct")
_FIGSIZE = (7.0, 3.2)
_DPI = 120


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_metric_boxes(summaries: list[dict], out_dir: Path) -> Path:
    """Side-by-side boxplots of per-video accuracy and F1 for each algorithm."""
    fig, axes = plt.subplots(1, 2, figsize=_FIGSIZE)
    for ax, key, title in zip(axes, ("acc_mean", "f1_mean"), ("Accuracy", "F1")):
        data, labels = [], []
        for algo in ALGO_ORDER:
            values = [
                s[key]
                for s in summaries
                if s.get("algo") == algo and not s.get("excluded") and s.get(key) is not None
            ]
            if values:
                data.append(values)
                labels.append(algo.upper())
        if data:
            ax.boxplot(data, tick_labels=labels, showmeans=True)
        ax.set_title(title)
        ax.set_ylabel("per-video mean")
        ax.grid(axis="y", alpha=0.3)
    return _save(fig, out_dir / "metrics_box.png")


def render_improvement_bars(rows: list[dict], out_dir: Path) -> Path:
    """Per-video percent change versus the baseline, one panel per metric."""
    fig, axes = plt.subplots(1, 2, figsize=_FIGSIZE)
    videos = sorted({r["video"] for r in rows})
    algos = [a for a in ALGO_ORDER if any(r["algo"] == a for r in rows)]
    width = 0.8 / max(1, len(algos))
    for ax, key, title in zip(axes, ("acc_pct", "f1_pct"), ("Accuracy", "F1")):
        for j, algo in enumerate(algos):
            xs, ys = [], []
            for i, video in enumerate(videos):
                match = [r for r in rows if r["video"] == video and r["algo"] == algo]
                if match and match[0][key] is not None:
                    xs.append(i + j * width)
                    ys.append(match[0][key])
            ax.bar(xs, ys, width=width, label=algo.upper())
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(range(len(videos)))
        ax.set_xticklabels(videos, rotation=45, ha="right", fontsize=7)
        ax.set_title(f"{title} vs baseline (%)")
        ax.grid(axis="y", alpha=0.3)
    if algos:
        axes[0].legend(fontsize=7)
    return _save(fig, out_dir / "improvement_bars.png")


def render_motif_video_support(reports: list[MotifReport], out_dir: Path) -> Path:
    """ECDFs of how many videos each motif reaches, at both count thresholds."""
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    for attr, label in (("videos_any", ">= 1 occurrence"), ("videos_10", ">= 10 occurrences")):
        values = [float(getattr(r, attr)) for r in reports]
        if not values:
            continue
        step = ecdf(values)
        xs = [0.0] + step.xs
        ps = [0.0] + step.ps
        ax.step(xs, ps, where="post", label=label)
    ax.set_xlabel("videos containing the motif")
    ax.set_ylabel("ECDF")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, out_dir / "motif_video_support_ecdf.png")
