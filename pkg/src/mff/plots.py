"""Static figure writers for calibration and uncertainty reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .calibration import CalibrationReport, ConfidenceHistogram
from .mc_dropout import MCDropoutReport


def save_reliability_diagram(path, report: CalibrationReport) -> None:
    """Per-bin accuracy bars against the identity diagonal."""
    m = report.n_bins
    midpoints = np.array([(b.index - 0.5) / m for b in report.bins])
    accuracy = np.array([b.accuracy for b in report.bins])
    counts = np.array([b.count for b in report.bins])
    fig, ax = plt.subplots(figsize=(5, 5))
    mask = counts > 0
    ax.bar(midpoints[mask], accuracy[mask], width=0.9 / m, color="#4878cf", edgecolor="black")
    ax.plot([0, 1], [0, 1], "k--", linewidth=1, label="perfect calibration")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("accuracy")
    ax.set_title(f"reliability (ECE = {report.ece_percent:.2f}%)")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confidence_histogram(path, hist: ConfidenceHistogram) -> None:
    """Confidence-bin counts with accuracy (solid) and mean-confidence (dashed) lines."""
    m = hist.n_bins
    midpoints = np.array([(i + 0.5) / m for i in range(m)])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(midpoints, hist.counts, width=0.9 / m, color="#6acc65", edgecolor="black")
    ax.axvline(hist.overall_accuracy, color="black", linestyle="-", label="accuracy")
    ax.axvline(hist.avg_confidence, color="black", linestyle="--", label="avg confidence")
    ax.set_xlim(0, 1)
    ax.set_xlabel("confidence")
    ax.set_ylabel("count")
    ax.set_title(f"confidence histogram (n = {hist.n})")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_mc_accuracy_histogram(path, report: MCDropoutReport, n_bins: int = 10) -> None:
    """Distribution of per-pass accuracies with the ensemble accuracy marked."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(
        report.per_pass_accuracy,
        bins=n_bins,
        color="#d65f5f",
        edgecolor="black",
    )
    ax.axvline(report.ensemble_accuracy, color="black", linestyle="-", label="ensemble")
    ax.set_xlabel("per-pass accuracy")
    ax.set_ylabel("count")
    ax.set_title(f"MC dropout, {report.n_passes} passes")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
