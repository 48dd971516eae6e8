"""Matplotlib renderings of the evaluation outputs.

Everything draws through the Agg backend and writes straight to files;
nothing here opens a window.  These figures accompany the delimited
outputs, they never replace them.
"""
from __future__ import annotations

from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .accuracy import PRCurve
from .calibration import ReliabilityDiagram

__all__ = [
    "save_reliability_figure",
    "save_pr_figure",
    "save_component_figure",
]


def save_reliability_figure(diagram: ReliabilityDiagram, path: str, title: str = "Reliability") -> None:
    """Bar chart of per-bin performance against the identity diagonal."""
    centers = (diagram.bin_edges[:-1] + diagram.bin_edges[1:]) / 2.0
    width = 1.0 / diagram.J
    occupied = diagram.n_classes > 0
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.bar(
        centers[occupied],
        diagram.mean_perf[occupied],
        width=width * 0.92,
        color="#4878a8",
        edgecolor="#2b4a68",
        label="performance",
    )
    ax.plot(
        centers[occupied],
        diagram.mean_conf[occupied],
        "o",
        color="#c44e52",
        markersize=3.5,
        label="confidence",
    )
    ax.plot([0, 1], [0, 1], "--", color="0.4", linewidth=1.0)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence bin")
    ax.set_ylabel("precision x mean IoU")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_pr_figure(curves: Mapping[int, PRCurve], path: str) -> None:
    """Interpolated precision-recall envelopes, one line per class."""
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    for class_id in sorted(curves):
        curve = curves[class_id]
        if curve.env_recall.size == 0:
            continue
        ax.step(
            curve.env_recall,
            curve.env_precision,
            where="post",
            label=f"class {class_id}",
            linewidth=1.2,
        )
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("interpolated precision")
    ax.set_title("Precision-recall")
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_component_figure(values: Mapping[str, float], path: str) -> None:
    """Horizontal bars for the headline scores, in the given order."""
    names = list(values)
    heights = [values[n] * 100.0 for n in names]
    fig, ax = plt.subplots(figsize=(5.2, 0.55 * max(4, len(names))))
    y = np.arange(len(names))[::-1]
    ax.barh(y, heights, color="#4878a8", edgecolor="#2b4a68", height=0.62)
    for yi, v in zip(y, heights):
        ax.text(v + 1.0, yi, f"{v:.1f}", va="center", fontsize=8)
    ax.set_yticks(y)
    ax.set_yticklabels(names)
    ax.set_xlim(0, 105)
    ax.set_xlabel("percent")
    ax.set_title("Score components")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
