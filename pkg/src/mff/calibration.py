"""Expected calibration error and the binned summaries behind reliability plots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataValidationError

DEFAULT_BINS = 10


def record_confidence(record) -> float:
    """Confidence of a binary prediction: the larger of the two class probabilities."""
    return max(record.prob_safe, record.prob_unsafe)


def assign_bin(confidence: float, n_bins: int) -> int:
    """1-based bin index for right-inclusive intervals ((m-1)/M, m/M].

    A confidence of exactly 0 falls into bin 1 so every record is counted.
    """
    edges = np.arange(1, n_bins + 1) / n_bins
    idx = int(np.searchsorted(edges, confidence, side="left"))
    return min(idx, n_bins - 1) + 1


def _bin_indices(confidences: np.ndarray, n_bins: int) -> np.ndarray:
    edges = np.arange(1, n_bins + 1) / n_bins
    idx = np.searchsorted(edges, confidences, side="left")
    return np.minimum(idx, n_bins - 1)


@dataclass(frozen=True)
class BinStats:
    """Per-bin aggregates; empty bins report zero confidence and accuracy."""

    index: int
    count: int
    avg_confidence: float
    accuracy: float

    @property
    def gap(self) -> float:
        return abs(self.accuracy - self.avg_confidence)

    def to_dict(self) -> dict:
        return {
            "bin": self.index,
            "count": self.count,
            "avg_confidence": self.avg_confidence,
            "accuracy": self.accuracy,
            "gap": self.gap,
        }


@dataclass(frozen=True)
class CalibrationReport:
    n_bins: int
    bins: tuple
    ece: float
    overall_accuracy: float
    avg_confidence: float
    n: int

    @property
    def ece_percent(self) -> float:
        return 100.0 * self.ece

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "n": self.n,
            "ece": self.ece,
            "ece_percent": self.ece_percent,
            "overall_accuracy": self.overall_accuracy,
            "avg_confidence": self.avg_confidence,
            "bins": [b.to_dict() for b in self.bins],
        }


def ece(records: Sequence, n_bins: int = DEFAULT_BINS) -> CalibrationReport:
    """Bin predictions by confidence and sum the count-weighted |accuracy - confidence| gaps."""
    if n_bins < 1:
        raise ConfigurationError(f"n_bins must be >= 1, got {n_bins}")
    records = list(records)
    if not records:
        raise DataValidationError("cannot measure calibration on an empty prediction set")
    conf = np.array([record_confidence(r) for r in records], dtype=np.float64)
    correct = np.array([r.predicted == r.label for r in records], dtype=np.float64)
    idx = _bin_indices(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sums = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sums = np.bincount(idx, weights=correct, minlength=n_bins)

    n = len(records)
    bins = []
    total = 0.0
    for m in range(n_bins):
        c = int(counts[m])
        stats = BinStats(
            index=m + 1,
            count=c,
            avg_confidence=conf_sums[m] / c if c else 0.0,
            accuracy=acc_sums[m] / c if c else 0.0,
        )
        total += (c / n) * stats.gap
        bins.append(stats)
    return CalibrationReport(
        n_bins=n_bins,
        bins=tuple(bins),
        ece=total,
        overall_accuracy=float(correct.mean()),
        avg_confidence=float(conf.mean()),
        n=n,
    )


@dataclass(frozen=True)
class ReliabilityBin:
    """One bar of a reliability diagram."""

    midpoint: float
    count: int
    accuracy: float
    gap: float


def reliability_bins(records: Sequence, n_bins: int = DEFAULT_BINS) -> list:
    """Reliability-diagram rows; count/n-weighted gaps sum back to the ece value."""
    report = ece(records, n_bins)
    return [
        ReliabilityBin(
            midpoint=(b.index - 0.5) / n_bins,
            count=b.count,
            accuracy=b.accuracy,
            gap=b.gap,
        )
        for b in report.bins
    ]


@dataclass(frozen=True)
class ConfidenceHistogram:
    """Confidence-bin occupancy plus the two scalar reference lines."""

    n_bins: int
    counts: tuple
    overall_accuracy: float
    avg_confidence: float
    n: int


def confidence_histogram(records: Sequence, n_bins: int = DEFAULT_BINS) -> ConfidenceHistogram:
    """Count predictions per confidence bin; bins partition the record set."""
    report = ece(records, n_bins)
    return ConfidenceHistogram(
        n_bins=n_bins,
        counts=tuple(b.count for b in report.bins),
        overall_accuracy=report.overall_accuracy,
        avg_confidence=report.avg_confidence,
        n=report.n,
    )


def write_report_json(path, report: CalibrationReport) -> None:
    """Serialize a calibration report deterministically."""
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_bins_csv(path, report: CalibrationReport) -> None:
    """Per-bin table: bin, count, conf, acc, gap."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "count", "conf", "acc", "gap"])
        for b in report.bins:
            writer.writerow(
                [b.index, b.count, f"{b.avg_confidence:.6f}", f"{b.accuracy:.6f}", f"{b.gap:.6f}"]
            )
