"""Report figures rendered to files (headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport


def save_ced_figure(report: EvalReport, path) -> None:
    """Render the cumulative error distribution curve to an image file."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(report.ced.thresholds, report.ced.fractions, lw=1.8)
    ax.set_xlim(0.0, report.cutoff)
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("error threshold")
    ax.set_ylabel("fraction of images")
    ax.set_title(f"AUC {report.auc:.4f}, failure {report.failure_rate:.3f}")
    ax.grid(alpha=0.3)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
