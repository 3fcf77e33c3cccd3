"""Static figures for backtest reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from gaitadapt.schemas.report import EvalReport  # noqa: E402


def plot_heat_grid(report: EvalReport, path: Path, title: str | None = None) -> Path:
    """Rank-1 by (training step, test set); blank cells were never evaluated."""
    matrix = report.accuracy_matrix()
    names = list(report.test_sets)
    steps = [row.step for row in report.rows]

    fig, ax = plt.subplots(figsize=(1.2 * max(len(names), 2) + 2, 0.8 * max(len(steps), 2) + 1.5))
    image = ax.imshow(np.ma.masked_invalid(matrix), vmin=0.0, vmax=100.0, cmap="viridis")
    ax.set_xticks(range(len(names)), labels=names, rotation=45, ha="right")
    ax.set_yticks(range(len(steps)), labels=[f"step {s}" for s in steps])
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            if not np.isnan(matrix[i, j]):
                ax.text(j, i, f"{matrix[i, j]:.1f}", ha="center", va="center", color="white")
    fig.colorbar(image, ax=ax, label="rank-1 (%)")
    ax.set_title(title or "Backtest rank-1")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_accuracy_curves(report: EvalReport, path: Path, title: str | None = None) -> Path:
    """Source, target and per-domain average rank-1 after each step."""
    steps = [row.step for row in report.rows]
    series = {
        "source": [report.source(row) for row in report.rows],
        "target": [row.target.rank1 for row in report.rows],
        "per-domain average": [report.per_domain_average(row) for row in report.rows],
    }

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        ys = [np.nan if v is None else v for v in values]
        ax.plot(steps, ys, marker="o", label=label)
    ax.set_xlabel("training step")
    ax.set_ylabel("rank-1 (%)")
    ax.set_ylim(0, 100)
    ax.set_xticks(steps)
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title(title or "Accuracy over the stream")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
