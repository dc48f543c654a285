"""
Building a labeled audio/stereo-frame dataset
=============================================

Walks through the scenario rules, builds a small synthetic manifest,
and shows the fold machinery that cross-validation runs on.
"""

from pathlib import Path

import numpy as np

from mff import audio, dataset
from mff.errors import DataValidationError

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# The label comes from (spoken command, vehicle speed).  Four scenarios are
# defined; anything between them is rejected rather than guessed.
print("scenario  command  speed        label")
for cmd, speed in [("go", 0.0), ("go", 7.0), ("stop", 18.0), ("stop", 30.0)]:
    lab = dataset.label_scenario(cmd, speed)
    print(f"   {lab.scenario_id}       {cmd:5s}  {speed:5.1f} km/h   {lab.safety}")

try:
    dataset.label_scenario("go", 3.0)
except DataValidationError as err:
    print("gap speed rejected:", err)

# A manifest is a pure function of (n, balance, seed): 40 pairs, half safe.
manifest = dataset.build_manifest(40, 0.5, seed=3)
labels = manifest.labels
print(f"\nmanifest: {len(manifest)} pairs, {int((labels == 0).sum())} safe / "
      f"{int((labels == 1).sum())} unsafe")

path = OUT / "demo_manifest.jsonl"
dataset.write_manifest(path, manifest)
print(f"wrote {path} ({path.stat().st_size} bytes; rerunning reproduces it byte-for-byte)")

# Each record loads as one audio feature map plus a stereo frame pair.
fc = audio.feature_config("mel", "tiny")
small = dataset.load_samples(manifest, fc, image_size=64, indices=np.arange(4))
print(f"\nloaded batch: audio {small.audio.shape}, left {small.left.shape}, "
      f"right {small.right.shape}")

# 10-fold split: stratified, disjoint, sizes within one of each other.
split = dataset.split_kfold(manifest, 10, seed=3)
sizes = [len(f) for f in split.folds]
print(f"fold sizes: {sizes}")
fold0 = split.folds[0]
print(f"fold 0 class counts: safe={int((labels[fold0] == 0).sum())}, "
      f"unsafe={int((labels[fold0] == 1).sum())}")

# Standardization is fit on training data only, then applied everywhere.
batch = dataset.load_samples(manifest, fc, image_size=64)
stats = dataset.fit_standardizer(batch.subset(split.train_indices(0)))
standardized = dataset.apply_standardizer(batch, stats)
print(f"standardized audio: mean {standardized.audio.mean():+.3f}, "
      f"std {standardized.audio.std():.3f}")
