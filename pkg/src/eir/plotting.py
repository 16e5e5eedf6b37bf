"""Figures for training curves and ablation tables (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_KEYS = ("L_C", "L_G", "L_I", "L_total")


def plot_curves(curves: list[dict], path: str | Path) -> Path:
    """Loss curves on a log axis, with validation BLEU-4 on a twin axis."""
    path = Path(path)
    steps = [row["step"] for row in curves]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in LOSS_KEYS:
        vals = [row[key] for row in curves]
        if any(v > 0 for v in vals):
            ax.plot(steps, vals, label=key, linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    evals = [(row["step"], row["val_BL-4"]) for row in curves if row.get("val_BL-4") is not None]
    if evals:
        twin = ax.twinx()
        twin.plot(*zip(*evals), "k--o", markersize=3, label="val BL-4")
        twin.set_ylabel("val BL-4")
        twin.set_ylim(0, 1)
        twin.legend(loc="upper center")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(rows, metrics, path: str | Path) -> Path:
    """Grouped bars, one group per metric, one bar per arm, error bars = spread."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(metrics)), 4))
    x = np.arange(len(metrics))
    width = 0.8 / max(len(rows), 1)
    for i, row in enumerate(rows):
        ax.bar(
            x + i * width - 0.4 + width / 2,
            [row.mean(m) for m in metrics],
            width,
            yerr=[row.spread(m) for m in metrics],
            label=row.arm,
            capsize=2,
        )
    ax.set_xticks(x)
    ax.set_xticklabels(metrics)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
