"""Scenario labeling, paired audio/stereo-image manifests, fold splits,
and input standardization.

Ground truth follows four (command, speed) buckets; speeds falling in the
gaps between buckets are refused rather than guessed.  Manifests are JSON
Lines files whose records either point at real media (wav/png paths) or
embed seeded synthetic-generation parameters, so a manifest is a complete,
reproducible description of a dataset.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import audio
from .audio import SAMPLE_RATE_HZ, FeatureConfig, WaveformClip
from .errors import ConfigurationError, DataValidationError

COMMANDS = ("go", "stop")
SAFETY_CLASSES = ("safe", "unsafe")  # class index 0 = safe, 1 = unsafe
IMAGE_SIZE = 224
STEREO_SHIFT_PX = 4

# (command, lo, hi, scenario_id, safety); closed speed intervals.
_SCENARIO_BUCKETS = (
    ("go", 0.0, 0.0, 1, "unsafe"),
    ("go", 5.0, 10.0, 2, "safe"),
    ("stop", 15.0, 20.0, 3, "safe"),
    ("stop", 25.0, float("inf"), 4, "unsafe"),
)


@dataclass(frozen=True)
class ScenarioLabel:
    command: str
    speed_kmh: float
    scenario_id: int
    safety: str

    @property
    def class_index(self) -> int:
        return SAFETY_CLASSES.index(self.safety)


def label_scenario(command: str, speed_kmh: float) -> ScenarioLabel:
    """Map (command, speed) to its scenario bucket and safe/unsafe label.

    Speeds in the undefined gaps (0 < v < 5 for "go"; v < 15 or
    20 < v < 25 for "stop") raise rather than fabricate a label.
    """
    if command not in COMMANDS:
        raise DataValidationError(f"unknown command {command!r}")
    if not np.isfinite(speed_kmh) or speed_kmh < 0:
        raise DataValidationError(f"invalid speed {speed_kmh!r} km/h")
    for cmd, lo, hi, scenario_id, safety in _SCENARIO_BUCKETS:
        if command == cmd and lo <= speed_kmh <= hi:
            return ScenarioLabel(command, float(speed_kmh), scenario_id, safety)
    raise DataValidationError(
        f"speed {speed_kmh} km/h falls outside every declared bucket for {command!r}"
    )


def scenario_bucket(scenario_id: int):
    """Speed interval (lo, hi) of a scenario id."""
    for cmd, lo, hi, sid, safety in _SCENARIO_BUCKETS:
        if sid == scenario_id:
            return cmd, lo, hi, safety
    raise DataValidationError(f"unknown scenario id {scenario_id}")


def derive_seed(seed: int, *indices: int) -> int:
    """Stable per-record seed from a run seed and one or more indices."""
    state = np.random.SeedSequence((int(seed),) + tuple(int(i) for i in indices))
    return int(state.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Synthetic generators (desk-scale stand-ins for real recordings/frames)
# ---------------------------------------------------------------------------

_CHIRP_BAND_HZ = (300.0, 900.0)
_CHIRP_AMPLITUDE = 0.8
_AUDIO_NOISE = 0.05
_IMAGE_NOISE = 0.02
_STRIPE_CONTRAST = 0.25


def synth_command_audio(command: str, seed: int) -> WaveformClip:
    """One-second seeded chirp: "go" sweeps 300->900 Hz, "stop" 900->300 Hz."""
    if command not in COMMANDS:
        raise DataValidationError(f"unknown command {command!r}")
    f0, f1 = _CHIRP_BAND_HZ if command == "go" else _CHIRP_BAND_HZ[::-1]
    t = np.arange(SAMPLE_RATE_HZ) / SAMPLE_RATE_HZ
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t)
    rng = np.random.default_rng(derive_seed(seed, 0))
    noise = rng.uniform(-_AUDIO_NOISE, _AUDIO_NOISE, SAMPLE_RATE_HZ)
    samples = np.clip(_CHIRP_AMPLITUDE * np.sin(phase) + noise, -1.0, 1.0)
    return WaveformClip(samples, SAMPLE_RATE_HZ, f"synth:{command}:{seed}")


@dataclass(frozen=True)
class StereoView:
    """Paired left/right RGB frames with identical dimensions."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.float64)
        right = np.asarray(self.right, dtype=np.float64)
        if left.shape != right.shape:
            raise DataValidationError(
                f"left/right shape mismatch: {left.shape} vs {right.shape}"
            )
        if left.ndim != 3 or left.shape[2] != 3:
            raise DataValidationError(f"frames must be HxWx3, got {left.shape}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)


def stripe_cycles_for_scenario(scenario_id: int) -> int:
    """Stripe frequency in cycles per image height; strictly monotone in bucket."""
    return 4 * scenario_id


def synth_stereo_frames(speed_kmh: float, seed: int, size: int = IMAGE_SIZE) -> StereoView:
    """Seeded gray frames striped horizontally; stripe period encodes the
    speed bucket, right frame is the left rolled 4 px (parallax proxy)."""
    label = label_scenario_from_speed(speed_kmh)
    cycles = stripe_cycles_for_scenario(label.scenario_id)
    y = np.arange(size)
    stripe = 0.5 + _STRIPE_CONTRAST * np.sin(2 * np.pi * cycles * y / size)
    rng = np.random.default_rng(derive_seed(seed, 1))
    noise = rng.uniform(-_IMAGE_NOISE, _IMAGE_NOISE, (size, size, 3))
    left = np.clip(stripe[:, None, None] + noise, 0.0, 1.0)
    right = np.roll(left, STEREO_SHIFT_PX, axis=1)
    return StereoView(left, right)


def label_scenario_from_speed(speed_kmh: float) -> ScenarioLabel:
    """Bucket a speed irrespective of command (buckets have disjoint speeds)."""
    for cmd, lo, hi, scenario_id, safety in _SCENARIO_BUCKETS:
        if lo <= speed_kmh <= hi:
            return ScenarioLabel(cmd, float(speed_kmh), scenario_id, safety)
    raise DataValidationError(f"speed {speed_kmh} km/h outside every declared bucket")


# ---------------------------------------------------------------------------
# Manifest records
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("id", "audio", "left", "right", "command", "speed_kmh", "scenario", "label")


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    audio: object  # path str or {"synth": {"command": ..., "seed": ...}}
    left: object  # path str or {"synth": {"speed_kmh": ..., "seed": ...}}
    right: object
    command: str
    speed_kmh: float
    scenario: int
    label: str

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "audio": self.audio,
            "left": self.left,
            "right": self.right,
            "command": self.command,
            "speed_kmh": self.speed_kmh,
            "scenario": self.scenario,
            "label": self.label,
        }


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    seed: int

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        """Class indices, 0 = safe, 1 = unsafe."""
        return np.array([SAFETY_CLASSES.index(r.label) for r in self.entries], dtype=np.int64)


def validate_record(obj: dict, line_no: Optional[int] = None) -> ManifestRecord:
    """Check one manifest object against the scenario rules."""
    where = f"record {line_no}" if line_no is not None else f"record {obj.get('id')!r}"
    missing = [f for f in MANIFEST_FIELDS if f not in obj]
    if missing:
        raise DataValidationError(f"{where}: missing fields {missing}")
    try:
        expected = label_scenario(obj["command"], obj["speed_kmh"])
    except DataValidationError as err:
        raise DataValidationError(f"{where}: {err}")
    if int(obj["scenario"]) != expected.scenario_id or obj["label"] != expected.safety:
        raise DataValidationError(
            f"{where}: ({obj['command']!r}, {obj['speed_kmh']} km/h) must be "
            f"scenario {expected.scenario_id} / {expected.safety}, got "
            f"scenario {obj['scenario']} / {obj['label']!r}"
        )
    return ManifestRecord(
        id=str(obj["id"]),
        audio=obj["audio"],
        left=obj["left"],
        right=obj["right"],
        command=obj["command"],
        speed_kmh=float(obj["speed_kmh"]),
        scenario=int(obj["scenario"]),
        label=obj["label"],
    )


def build_manifest(
    n_pairs: int,
    class_balance: float = 0.5,
    seed: int = 0,
    mode: str = "synthetic",
    source: Optional[Sequence[dict]] = None,
) -> DatasetManifest:
    """Build a labeled manifest of audio/stereo-image pairs.

    Synthetic mode draws (scenario, speed) pairs meeting the requested
    safe fraction within one record; ingest mode validates caller-provided
    records (paths plus command/speed) and fails loudly on any bad one.
    """
    if mode == "synthetic":
        if n_pairs <= 0:
            raise ConfigurationError("n_pairs must be positive")
        if not 0.0 <= class_balance <= 1.0:
            raise ConfigurationError("class_balance must lie in [0, 1]")
        return _build_synthetic(n_pairs, class_balance, seed)
    if mode == "ingest":
        if source is None:
            raise ConfigurationError("ingest mode requires a source record listing")
        return _build_ingest(source, seed)
    raise ConfigurationError(f"unknown manifest mode {mode!r}")


def _build_synthetic(n_pairs: int, class_balance: float, seed: int) -> DatasetManifest:
    n_safe = int(round(n_pairs * class_balance))
    n_unsafe = n_pairs - n_safe
    # Alternate scenarios within each class so both buckets appear.
    scenario_plan = []
    for i in range(n_safe):
        scenario_plan.append((2, 3)[i % 2])
    for i in range(n_unsafe):
        scenario_plan.append((1, 4)[i % 2])

    entries = []
    for idx, scenario_id in enumerate(scenario_plan):
        rng = np.random.default_rng(derive_seed(seed, idx))
        command, lo, hi, safety = scenario_bucket(scenario_id)
        if scenario_id == 1:
            speed = 0.0
        elif scenario_id == 4:
            speed = float(np.round(rng.uniform(25.0, 40.0), 3))
        else:
            speed = float(np.round(rng.uniform(lo, hi), 3))
        audio_seed = derive_seed(seed, idx, 0)
        image_seed = derive_seed(seed, idx, 1)
        synth_image = {"synth": {"speed_kmh": speed, "seed": image_seed}}
        record = ManifestRecord(
            id=f"pair-{idx:05d}",
            audio={"synth": {"command": command, "seed": audio_seed}},
            left=synth_image,
            right=synth_image,
            command=command,
            speed_kmh=speed,
            scenario=scenario_id,
            label=safety,
        )
        entries.append(record)
    return DatasetManifest(tuple(entries), seed)


def _build_ingest(source: Sequence[dict], seed: int) -> DatasetManifest:
    entries, problems = [], []
    seen_ids = set()
    for line_no, obj in enumerate(source, start=1):
        try:
            rec = validate_record(obj, line_no)
            if rec.id in seen_ids:
                raise DataValidationError(f"record {line_no}: duplicate id {rec.id!r}")
            seen_ids.add(rec.id)
            entries.append(rec)
        except DataValidationError as err:
            problems.append(str(err))
    if problems:
        raise DataValidationError(
            "ingest rejected {} record(s):\n".format(len(problems)) + "\n".join(problems)
        )
    if not entries:
        raise DataValidationError("ingest source contains no records")
    return DatasetManifest(tuple(entries), seed)


def write_manifest(path, manifest: DatasetManifest):
    """Write JSON Lines, one record per line; byte-stable for fixed inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in manifest.entries:
            fh.write(json.dumps(record.to_json_obj()) + "\n")


def read_manifest(path, seed: int = 0) -> DatasetManifest:
    entries = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataValidationError(f"{path}:{line_no}: invalid JSON ({err})")
            rec = validate_record(obj, line_no)
            if rec.id in seen_ids:
                raise DataValidationError(f"{path}:{line_no}: duplicate id {rec.id!r}")
            seen_ids.add(rec.id)
            entries.append(rec)
    if not entries:
        raise DataValidationError(f"{path}: empty manifest")
    return DatasetManifest(tuple(entries), seed)


# ---------------------------------------------------------------------------
# Media loading
# ---------------------------------------------------------------------------


def load_image(path, size: int) -> np.ndarray:
    """Load a PNG, center-crop to square, bilinear-resize to (size, size, 3) in [0, 1]."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        if min(w, h) < size:
            raise DataValidationError(
                f"{path}: image {w}x{h} smaller than requested {size}x{size}"
            )
        side = min(w, h)
        left = (w - side) // 2
        top = (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
        img = img.resize((size, size), Image.BILINEAR)
        return np.asarray(img, dtype=np.float64) / 255.0


def save_image(path, frame: np.ndarray):
    """Write an HxWx3 float frame in [0, 1] as 8-bit PNG."""
    data = np.clip(np.round(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_clip_for_record(record: ManifestRecord) -> WaveformClip:
    if isinstance(record.audio, dict) and "synth" in record.audio:
        spec = record.audio["synth"]
        return synth_command_audio(spec["command"], int(spec["seed"]))
    return audio.read_wav_clip(record.audio, source_id=record.id)


def load_view_for_record(record: ManifestRecord, size: int) -> StereoView:
    if isinstance(record.left, dict) and "synth" in record.left:
        spec = record.left["synth"]
        return synth_stereo_frames(float(spec["speed_kmh"]), int(spec["seed"]), size)
    return StereoView(load_image(record.left, size), load_image(record.right, size))


@dataclass
class SampleBatch:
    """Materialized arrays for a list of manifest records.

    audio: (n, bins, frames, 1); left/right: (n, size, size, 3);
    labels: (n,) class indices.
    """

    ids: list
    audio: np.ndarray
    left: np.ndarray
    right: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, indices) -> "SampleBatch":
        indices = np.asarray(indices)
        return SampleBatch(
            ids=[self.ids[i] for i in indices],
            audio=self.audio[indices],
            left=self.left[indices],
            right=self.right[indices],
            labels=self.labels[indices],
        )


def load_samples(
    manifest: DatasetManifest,
    feature_config: FeatureConfig,
    image_size: int,
    indices: Optional[Sequence[int]] = None,
    dtype=np.float32,
) -> SampleBatch:
    """Materialize features and frames for the given manifest rows."""
    if indices is None:
        indices = range(len(manifest))
    ids, feats, lefts, rights, labels = [], [], [], [], []
    for i in indices:
        record = manifest.entries[i]
        clip = load_clip_for_record(record)
        feat = audio.extract_feature(clip, feature_config)
        view = load_view_for_record(record, image_size)
        ids.append(record.id)
        feats.append(feat.values[:, :, None])
        lefts.append(view.left)
        rights.append(view.right)
        labels.append(SAFETY_CLASSES.index(record.label))
    return SampleBatch(
        ids=ids,
        audio=np.stack(feats).astype(dtype),
        left=np.stack(lefts).astype(dtype),
        right=np.stack(rights).astype(dtype),
        labels=np.array(labels, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Fold splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple  # k disjoint index arrays

    def __len__(self):
        return len(self.folds)

    def train_indices(self, fold: int) -> np.ndarray:
        rest = [f for i, f in enumerate(self.folds) if i != fold]
        return np.sort(np.concatenate(rest))


def stratified_partition(labels: np.ndarray, k: int, rng) -> list:
    """Deal indices 0..n-1 into k label-stratified parts of near-equal size.

    Classes are dealt consecutively round-robin, so per-class counts and
    total sizes both stay within 1 across parts.
    """
    labels = np.asarray(labels)
    folds = [[] for _ in range(k)]
    cursor = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        for idx in members:
            folds[cursor % k].append(int(idx))
            cursor += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def split_kfold(manifest: DatasetManifest, k: int, seed: int = 0) -> FoldSplit:
    """Label-stratified k-fold partition: disjoint, covering, sizes within 1."""
    n = len(manifest)
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    if k > n:
        raise ConfigurationError(f"k={k} exceeds {n} samples")
    rng = np.random.default_rng(derive_seed(seed, 2))
    return FoldSplit(tuple(stratified_partition(manifest.labels, k, rng)))


def holdout_split(manifest: DatasetManifest, test_fraction: float, seed: int = 0):
    """Stratified single split into (train_indices, test_indices)."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    k = max(2, int(round(1.0 / test_fraction)))
    split = split_kfold(manifest, k, seed)
    test = split.folds[0]
    train = split.train_indices(0)
    return train, test


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class StandardizerStats:
    """Per-bin stats for audio features, per-channel stats for images."""

    audio_mean: np.ndarray
    audio_std: np.ndarray
    image_mean: np.ndarray
    image_std: np.ndarray

    def to_dict(self) -> dict:
        return {
            "audio_mean": self.audio_mean.tolist(),
            "audio_std": self.audio_std.tolist(),
            "image_mean": self.image_mean.tolist(),
            "image_std": self.image_std.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StandardizerStats":
        return cls(*(np.asarray(obj[k], dtype=np.float64) for k in
                     ("audio_mean", "audio_std", "image_mean", "image_std")))


def _floored_std(std: np.ndarray, what: str) -> np.ndarray:
    if np.any(std < STD_FLOOR):
        warnings.warn(
            f"{what}: {int(np.sum(std < STD_FLOOR))} zero-variance entries; "
            f"std floored at {STD_FLOOR}",
            stacklevel=3,
        )
    return np.maximum(std, STD_FLOOR)


def fit_standardizer(batch: SampleBatch) -> StandardizerStats:
    """Per-bin / per-channel mean and std over the training samples only."""
    if len(batch) < 2:
        raise DataValidationError("need at least 2 training samples to fit a standardizer")
    x = np.asarray(batch.audio, dtype=np.float64)  # (n, bins, frames, 1)
    audio_mean = x.mean(axis=(0, 2, 3))
    audio_std = _floored_std(x.std(axis=(0, 2, 3)), "audio bins")
    pixels = np.concatenate(
        [np.asarray(batch.left, dtype=np.float64), np.asarray(batch.right, dtype=np.float64)]
    )
    image_mean = pixels.mean(axis=(0, 1, 2))
    image_std = _floored_std(pixels.std(axis=(0, 1, 2)), "image channels")
    return StandardizerStats(audio_mean, audio_std, image_mean, image_std)


def apply_standardizer(batch: SampleBatch, stats: StandardizerStats) -> SampleBatch:
    """Return a standardized copy; audio by feature bin, images by channel."""
    if batch.audio.shape[1] != stats.audio_mean.size:
        raise DataValidationError(
            f"batch has {batch.audio.shape[1]} feature bins but the standardizer "
            f"was fit on {stats.audio_mean.size}; feature kind/scale mismatch"
        )
    dtype = batch.audio.dtype
    a_mean = stats.audio_mean[None, :, None, None].astype(dtype)
    a_std = stats.audio_std[None, :, None, None].astype(dtype)
    i_mean = stats.image_mean[None, None, None, :].astype(dtype)
    i_std = stats.image_std[None, None, None, :].astype(dtype)
    return SampleBatch(
        ids=list(batch.ids),
        audio=(batch.audio - a_mean) / a_std,
        left=(batch.left - i_mean) / i_std,
        right=(batch.right - i_mean) / i_std,
        labels=batch.labels.copy(),
    )
