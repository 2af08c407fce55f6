"""Figure rendering for the report paths.

Figures are companions to the machine-readable outputs, never the primary
artifact: every number shown here is also in a JSON/CSV next to the image.
Uses the Agg backend so report generation works headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_correlation_heatmap(grid: dict, path: str | os.PathLike,
                             title: str = "Spearman rank correlation") -> None:
    """Render the metric-by-metric correlation grid as an annotated heatmap."""
    names = grid["metrics"]
    rho = np.asarray(grid["rho"], dtype=float)
    n = len(names)
    fig, ax = plt.subplots(figsize=(1.2 * n + 2.0, 1.0 * n + 1.4))
    im = ax.imshow(rho, vmin=-1.0, vmax=1.0, cmap="RdBu_r")
    ax.set_xticks(range(n), labels=names, rotation=30, ha="right")
    ax.set_yticks(range(n), labels=names)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{rho[i, j]:.3f}", ha="center", va="center",
                    fontsize=9,
                    color="white" if abs(rho[i, j]) > 0.6 else "black")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_destination_metrics_figure(report: dict,
                                    path: str | os.PathLike) -> None:
    """Bar panels for Error@k (km) and Accuracy@k per evaluated method."""
    methods = [m for m in ("llm", "gmm") if m in report and report[m]]
    fig, (ax_err, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))

    width = 0.8 / max(1, len(methods))
    k_values = sorted(int(k) for k in report.get("k_values", [1, 5]))
    xs = np.arange(len(k_values))
    for mi, method in enumerate(methods):
        errs = [report[method]["error_km"].get(str(k)) for k in k_values]
        shown = [(x, e) for x, e in zip(xs, errs) if e is not None]
        if shown:
            ax_err.bar([x + mi * width for x, _ in shown],
                       [e for _, e in shown], width=width,
                       label=method.upper())
    ax_err.set_xticks(xs + width * (len(methods) - 1) / 2,
                      labels=[f"@{k}" for k in k_values])
    ax_err.set_ylabel("error (km)")
    ax_err.set_title("Error@k")
    ax_err.legend()

    radii = sorted(int(r) for r in report.get("radii_m", [100, 500]))
    combos = [(k, r) for r in radii for k in k_values]
    xs = np.arange(len(combos))
    for mi, method in enumerate(methods):
        acc = report[method]["accuracy"]
        vals = [acc.get(str(k), {}).get(str(r)) for k, r in combos]
        shown = [(x, v) for x, v in zip(xs, vals) if v is not None]
        if shown:
            ax_acc.bar([x + mi * width for x, _ in shown],
                       [v for _, v in shown], width=width,
                       label=method.upper())
    ax_acc.set_xticks(xs + width * (len(methods) - 1) / 2,
                      labels=[f"@{k}\n{r}m" for k, r in combos])
    ax_acc.set_ylim(0, 1)
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_title("Accuracy@k within radius")
    ax_acc.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
