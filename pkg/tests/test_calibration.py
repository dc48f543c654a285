"""Calibration metric tests against a direct two-pass evaluation of the definition."""

import csv
import json

import numpy as np
import pytest

from mff.calibration import (
    DEFAULT_BINS,
    assign_bin,
    confidence_histogram,
    ece,
    record_confidence,
    reliability_bins,
    write_bins_csv,
    write_report_json,
)
from mff.errors import ConfigurationError, DataValidationError
from mff.training import PredictionRecord


def make_record(i, conf, correct):
    """Binary record predicted 'safe' with the given confidence >= 0.5."""
    return PredictionRecord(
        id=f"r{i}",
        prob_safe=conf,
        prob_unsafe=1.0 - conf,
        predicted="safe",
        label="safe" if correct else "unsafe",
    )


def random_records(rng, n):
    records = []
    for i in range(n):
        p_safe = float(rng.uniform(0.0, 1.0))
        records.append(
            PredictionRecord(
                id=f"r{i}",
                prob_safe=p_safe,
                prob_unsafe=1.0 - p_safe,
                predicted=str(rng.choice(["safe", "unsafe"])),
                label=str(rng.choice(["safe", "unsafe"])),
            )
        )
    return records


def direct_ece(records, n_bins):
    """Two-pass evaluation straight off the definition: assign bins by explicit
    interval membership, then sum count-weighted |accuracy - confidence|."""
    groups = [[] for _ in range(n_bins)]
    for r in records:
        c = max(r.prob_safe, r.prob_unsafe)
        b = 1
        for j in range(1, n_bins + 1):
            if c <= j / n_bins:
                b = j
                break
        groups[b - 1].append(r)
    n = len(records)
    total = 0.0
    for group in groups:
        if not group:
            continue
        acc = sum(g.predicted == g.label for g in group) / len(group)
        conf = sum(max(g.prob_safe, g.prob_unsafe) for g in group) / len(group)
        total += len(group) / n * abs(acc - conf)
    return total


def test_worked_four_record_example():
    records = [
        make_record(0, 0.95, True),
        make_record(1, 0.95, True),
        make_record(2, 0.65, False),
        make_record(3, 0.65, True),
    ]
    report = ece(records, n_bins=10)
    # bin 10: gap 0.05 weight 1/2; bin 7: gap 0.15 weight 1/2
    assert report.ece == pytest.approx(0.10, abs=1e-12)
    assert report.ece_percent == pytest.approx(10.0, abs=1e-10)
    assert report.n == 4
    assert report.overall_accuracy == pytest.approx(0.75)
    by_index = {b.index: b for b in report.bins}
    assert by_index[10].count == 2 and by_index[7].count == 2
    assert by_index[10].avg_confidence == pytest.approx(0.95, abs=1e-15)
    assert by_index[7].accuracy == pytest.approx(0.5, abs=1e-15)


def test_bin_assignment_right_inclusive_edges():
    assert assign_bin(0.0, 10) == 1
    assert assign_bin(0.1, 10) == 1
    assert assign_bin(0.1 + 1e-9, 10) == 2
    assert assign_bin(0.65, 10) == 7
    assert assign_bin(0.7, 10) == 7
    assert assign_bin(0.95, 10) == 10
    assert assign_bin(1.0, 10) == 10
    assert assign_bin(0.5, 1) == 1
    for m in (3, 5, 7, 16):
        for j in range(1, m + 1):
            assert assign_bin(j / m, m) == j


def test_confidence_is_max_probability():
    r = make_record(0, 0.8, True)
    assert record_confidence(r) == pytest.approx(0.8)
    flipped = PredictionRecord(
        id="x", prob_safe=0.3, prob_unsafe=0.7, predicted="unsafe", label="unsafe"
    )
    assert record_confidence(flipped) == pytest.approx(0.7)


def test_matches_direct_evaluation_over_random_sets():
    rng = np.random.default_rng(401)
    for trial in range(200):
        n = int(rng.integers(1, 501))
        records = random_records(rng, n)
        m = int(rng.choice([5, 10, 15]))
        got = ece(records, n_bins=m).ece
        want = direct_ece(records, m)
        assert abs(got - want) <= 1e-12, f"trial {trial}: {got} vs {want}"


def test_perfectly_calibrated_set_scores_zero():
    # per-bin accuracy equals per-bin confidence exactly (dyadic confidences)
    plan = [(0.5, 2, 1), (0.625, 8, 5), (0.75, 4, 3), (0.875, 8, 7), (1.0, 3, 3)]
    records = []
    for conf, count, n_correct in plan:
        for i in range(count):
            records.append(make_record(len(records), conf, i < n_correct))
    report = ece(records, n_bins=10)
    assert abs(report.ece) <= 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(402)
    records = random_records(rng, 257)
    base = ece(records, n_bins=10).ece
    for _ in range(5):
        shuffled = [records[i] for i in rng.permutation(len(records))]
        assert abs(ece(shuffled, n_bins=10).ece - base) <= 1e-12


def test_additive_over_bin_aligned_partitions():
    rng = np.random.default_rng(403)
    records = random_records(rng, 300)
    m = 10
    # binary confidence never drops below 0.5, so split inside the occupied range
    low = [r for r in records if assign_bin(record_confidence(r), m) <= 7]
    high = [r for r in records if assign_bin(record_confidence(r), m) > 7]
    assert low and high
    full = ece(records, n_bins=m).ece
    stitched = len(low) / len(records) * ece(low, n_bins=m).ece + len(high) / len(
        records
    ) * ece(high, n_bins=m).ece
    assert abs(full - stitched) <= 1e-12


def test_ece_bounds():
    rng = np.random.default_rng(404)
    for _ in range(50):
        records = random_records(rng, int(rng.integers(2, 200)))
        report = ece(records, n_bins=10)
        occupied_gaps = [b.gap for b in report.bins if b.count]
        assert 0.0 <= report.ece <= max(occupied_gaps) <= 1.0


def test_single_bin_collapses_to_overall_gap():
    rng = np.random.default_rng(405)
    records = random_records(rng, 97)
    report = ece(records, n_bins=1)
    want = abs(report.overall_accuracy - report.avg_confidence)
    assert abs(report.ece - want) <= 1e-12


def test_empty_records_rejected():
    with pytest.raises(DataValidationError):
        ece([], n_bins=10)


def test_bad_bin_count_rejected():
    records = [make_record(0, 0.9, True)]
    with pytest.raises(ConfigurationError):
        ece(records, n_bins=0)
    with pytest.raises(ConfigurationError):
        ece(records, n_bins=-3)


def test_reliability_bins_weighted_gaps_sum_to_ece():
    rng = np.random.default_rng(406)
    for _ in range(20):
        n = int(rng.integers(1, 400))
        records = random_records(rng, n)
        report = ece(records, n_bins=10)
        rows = reliability_bins(records, n_bins=10)
        assert len(rows) == 10
        weighted = sum(row.count / n * row.gap for row in rows)
        assert abs(weighted - report.ece) <= 1e-12
        assert [row.midpoint for row in rows] == pytest.approx(
            [(m + 0.5) / 10 for m in range(10)]
        )


def test_confidence_histogram_counts_partition_records():
    rng = np.random.default_rng(407)
    records = random_records(rng, 333)
    hist = confidence_histogram(records, n_bins=DEFAULT_BINS)
    assert len(hist.counts) == DEFAULT_BINS
    assert sum(hist.counts) == 333
    assert hist.n == 333
    assert 0.0 <= hist.overall_accuracy <= 1.0
    assert 0.0 <= hist.avg_confidence <= 1.0


def test_report_json_round_trip(tmp_path):
    rng = np.random.default_rng(408)
    records = random_records(rng, 64)
    report = ece(records, n_bins=10)
    path = tmp_path / "report.json"
    write_report_json(path, report)
    loaded = json.loads(path.read_text(encoding="utf-8"))
    assert loaded == report.to_dict()
    assert loaded["ece_percent"] == pytest.approx(100.0 * loaded["ece"])


def test_bins_csv_layout(tmp_path):
    rng = np.random.default_rng(409)
    records = random_records(rng, 128)
    report = ece(records, n_bins=10)
    path = tmp_path / "bins.csv"
    write_bins_csv(path, report)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["bin", "count", "conf", "acc", "gap"]
    assert len(rows) == 11
    assert sum(int(row[1]) for row in rows[1:]) == 128
    write_bins_csv(tmp_path / "again.csv", report)
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()
