"""Monte Carlo dropout: repeated stochastic passes and the spread they reveal."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models
from .calibration import assign_bin
from .dataset import SAFETY_CLASSES, SampleBatch, derive_seed
from .errors import ConfigurationError
from .layers import INFER_MC
from .models import Checkpoint
from .training import forward_probs_chunked

DEFAULT_PASSES = 100
HIST_BINS = 10


def mc_probs(checkpoint: Checkpoint, batch: SampleBatch, n_passes: int, seed: int) -> np.ndarray:
    """Stack of (n_passes, n, 2) probabilities, one dropout-active pass per row.

    Pass t draws its masks from a stream derived from (seed, t), so results are
    reproducible for a fixed seed and vary across seeds.
    """
    if n_passes < 1:
        raise ConfigurationError(f"n_passes must be >= 1, got {n_passes}")
    model = models.build_model(checkpoint.config)
    out = np.empty((n_passes, len(batch), models.N_CLASSES), dtype=np.float64)
    for t in range(n_passes):
        rng = np.random.default_rng(derive_seed(seed, 16, t))
        out[t] = forward_probs_chunked(model, batch, checkpoint.params, INFER_MC, rng)
    return out


def mc_predict_sample(checkpoint: Checkpoint, sample: SampleBatch, n_passes: int = DEFAULT_PASSES, seed: int = 0):
    """Mean and per-class standard deviation of the pass probabilities for one sample."""
    if len(sample) != 1:
        raise ConfigurationError(f"expected a single-sample batch, got {len(sample)} samples")
    probs = mc_probs(checkpoint, sample, n_passes, seed)[:, 0, :]
    return probs.mean(axis=0), probs.std(axis=0)


@dataclass(frozen=True)
class MCDropoutReport:
    n_passes: int
    per_pass_accuracy: tuple
    ensemble_accuracy: float
    ids: tuple
    labels: tuple
    ensemble_predicted: tuple
    mean_probs: np.ndarray
    std_probs: np.ndarray

    def to_dict(self) -> dict:
        acc = np.asarray(self.per_pass_accuracy)
        return {
            "n_passes": self.n_passes,
            "ensemble_accuracy": self.ensemble_accuracy,
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std()),
            "per_pass_accuracy": [float(a) for a in self.per_pass_accuracy],
            "samples": [
                {
                    "id": self.ids[i],
                    "label": self.labels[i],
                    "predicted": self.ensemble_predicted[i],
                    "mean_prob_safe": float(self.mean_probs[i, 0]),
                    "mean_prob_unsafe": float(self.mean_probs[i, 1]),
                    "std_prob_safe": float(self.std_probs[i, 0]),
                    "std_prob_unsafe": float(self.std_probs[i, 1]),
                }
                for i in range(len(self.ids))
            ],
        }


def mc_evaluate(checkpoint: Checkpoint, batch: SampleBatch, n_passes: int = DEFAULT_PASSES, seed: int = 0) -> MCDropoutReport:
    """Per-pass accuracies plus the ensemble built from the pass-mean probabilities."""
    probs = mc_probs(checkpoint, batch, n_passes, seed)
    labels = batch.labels
    per_pass = tuple(
        float(np.mean(models.decide(probs[t]) == labels)) for t in range(n_passes)
    )
    mean_probs = probs.mean(axis=0)
    ensemble = models.decide(mean_probs)
    return MCDropoutReport(
        n_passes=n_passes,
        per_pass_accuracy=per_pass,
        ensemble_accuracy=float(np.mean(ensemble == labels)),
        ids=tuple(str(i) for i in batch.ids),
        labels=tuple(SAFETY_CLASSES[y] for y in labels),
        ensemble_predicted=tuple(SAFETY_CLASSES[p] for p in ensemble),
        mean_probs=mean_probs,
        std_probs=probs.std(axis=0),
    )


def accuracy_histogram(report: MCDropoutReport, n_bins: int = HIST_BINS) -> list:
    """Counts of per-pass accuracies per right-inclusive bin; sums to n_passes."""
    counts = [0] * n_bins
    for acc in report.per_pass_accuracy:
        counts[assign_bin(acc, n_bins) - 1] += 1
    return counts


def write_mc_report_json(path, report: MCDropoutReport) -> None:
    """Serialize an MC-dropout report deterministically."""
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_mc_hist_csv(path, report: MCDropoutReport, n_bins: int = HIST_BINS) -> None:
    """Accuracy-bin occupancy table: bin, count."""
    counts = accuracy_histogram(report, n_bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "count"])
        for m, count in enumerate(counts, start=1):
            writer.writerow([m, count])
