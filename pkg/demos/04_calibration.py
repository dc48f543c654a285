"""
How well do the probabilities mean what they say?
=================================================

Reads predictions (from demo 03 if present, else a synthetic set),
computes the expected calibration error, and draws the reliability
diagram and confidence histogram.
"""

import json
from pathlib import Path

import numpy as np

from mff import calibration, plots
from mff.training import PredictionRecord

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

predictions = OUT / "tiny_predictions.jsonl"
if predictions.is_file():
    records = [
        PredictionRecord(**json.loads(line))
        for line in predictions.read_text(encoding="utf-8").splitlines()
    ]
    print(f"loaded {len(records)} predictions from {predictions}")
else:
    # Stand-in: an overconfident classifier (right 80% of the time but
    # reporting ~95% confidence).
    rng = np.random.default_rng(5)
    records = []
    for i in range(400):
        conf = float(rng.uniform(0.9, 1.0))
        correct = bool(rng.uniform() < 0.8)
        records.append(
            PredictionRecord(f"r{i}", conf, 1.0 - conf, "safe",
                             "safe" if correct else "unsafe")
        )
    print("demo 03 output not found; using a synthetic overconfident classifier")

report = calibration.ece(records, n_bins=10)
print(f"\nECE = {report.ece:.4f} ({report.ece_percent:.2f}%)")
print(f"overall accuracy {report.overall_accuracy:.3f}, "
      f"average confidence {report.avg_confidence:.3f}")

print("\nbin  count  avg_conf  accuracy  gap")
for b in report.bins:
    if b.count:
        print(f"{b.index:3d}  {b.count:5d}   {b.avg_confidence:.3f}     {b.accuracy:.3f}  {b.gap:.3f}")

# The scalar is exactly the count-weighted sum of the per-bin gaps.
rows = calibration.reliability_bins(records, n_bins=10)
weighted = sum(r.count / report.n * r.gap for r in rows)
assert abs(weighted - report.ece) <= 1e-12

calibration.write_report_json(OUT / "calibration_report.json", report)
calibration.write_bins_csv(OUT / "calibration_bins.csv", report)
plots.save_reliability_diagram(OUT / "reliability.png", report)
plots.save_confidence_histogram(
    OUT / "confidence_hist.png", calibration.confidence_histogram(records, 10)
)
print(f"\nwrote report, bins table, and two figures to {OUT}")
