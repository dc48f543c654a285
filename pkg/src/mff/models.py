"""Audio/vision fusion models: a VGGish-style audio encoder, VGG16-style
camera towers, and early/late fusion heads over them.

Audio encoder (mel or MFCC input, NHWC with one channel):
  [Conv+BN, pool, dropout] x2, then [Conv, Conv+BN, pool, dropout] x2,
  channels 64/128/256/512, global average pooling to a 512-vector.
Camera tower (224x224x3 input): five blocks of 2/2/3/3/3 convs with
  64/128/256/512/512 channels, each block ending pool + dropout, global
  average pooling to a 512-vector.
The tiny scale divides every channel count by 8 and shrinks the inputs
(64x64 images, 32x16 mel, 24x25 MFCC) so full training runs fit on a CPU.

Early fusion concatenates the three embeddings into one classifier head;
late fusion trains an audio classifier and a vision classifier separately
and averages their probability vectors, breaking exact ties toward
"unsafe".
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import audio as audio_mod
from .dataset import SampleBatch, StandardizerStats
from .errors import ConfigurationError, DataValidationError
from .layers import (
    INFER_DETERMINISTIC,
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    MaxPool2x2,
    ReLU,
    Sequential,
    softmax,
    softmax_cross_entropy,
)

FUSIONS = ("early", "late")
SCALES = ("full", "tiny")
_BASE_AUDIO_CHANNELS = (64, 128, 256, 512)
_BASE_TOWER_CHANNELS = (64, 128, 256, 512, 512)
_TOWER_CONVS_PER_BLOCK = (2, 2, 3, 3, 3)
_BASE_HEAD_WIDTH = 256
_BASE_IMAGE_SIZE = 224
N_CLASSES = 2


@dataclass(frozen=True)
class ModelConfig:
    fusion: str = "early"
    feature_kind: str = "mel"
    scale: str = "full"
    dropout_rate: float = 0.5
    share_tower_weights: bool = True

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigurationError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.scale not in SCALES:
            raise ConfigurationError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.feature_kind not in ("mel", "mfcc"):
            raise ConfigurationError(f"feature_kind must be mel or mfcc, got {self.feature_kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")

    @property
    def channel_divisor(self) -> int:
        return 1 if self.scale == "full" else 8

    @property
    def image_size(self) -> int:
        return _BASE_IMAGE_SIZE if self.scale == "full" else 64

    @property
    def audio_channels(self):
        return tuple(c // self.channel_divisor for c in _BASE_AUDIO_CHANNELS)

    @property
    def tower_channels(self):
        return tuple(c // self.channel_divisor for c in _BASE_TOWER_CHANNELS)

    @property
    def embedding_dim(self) -> int:
        return _BASE_AUDIO_CHANNELS[-1] // self.channel_divisor

    @property
    def head_width(self) -> int:
        return _BASE_HEAD_WIDTH // self.channel_divisor

    def feature_config(self) -> audio_mod.FeatureConfig:
        return audio_mod.feature_config(self.feature_kind, self.scale)

    @property
    def audio_input_shape(self):
        fc = self.feature_config()
        return (fc.n_rows, fc.n_frames, 1)

    @property
    def image_input_shape(self):
        return (self.image_size, self.image_size, 3)

    def to_dict(self) -> dict:
        return {
            "fusion": self.fusion,
            "feature_kind": self.feature_kind,
            "scale": self.scale,
            "dropout_rate": self.dropout_rate,
            "share_tower_weights": self.share_tower_weights,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def build_audio_encoder(prefix: str, config: ModelConfig) -> Sequential:
    """Four conv blocks ending in a global-average-pooled embedding."""
    c1, c2, c3, c4 = config.audio_channels
    rate = config.dropout_rate
    return Sequential(
        [
            Conv2d(f"{prefix}/b1/conv", 1, c1),
            BatchNorm2d(f"{prefix}/b1/bn", c1),
            ReLU(),
            MaxPool2x2(),
            Dropout(rate),
            Conv2d(f"{prefix}/b2/conv", c1, c2),
            BatchNorm2d(f"{prefix}/b2/bn", c2),
            ReLU(),
            MaxPool2x2(),
            Dropout(rate),
            Conv2d(f"{prefix}/b3/conv1", c2, c3),
            ReLU(),
            Conv2d(f"{prefix}/b3/conv2", c3, c3),
            BatchNorm2d(f"{prefix}/b3/bn", c3),
            ReLU(),
            MaxPool2x2(),
            Dropout(rate),
            Conv2d(f"{prefix}/b4/conv1", c3, c4),
            ReLU(),
            Conv2d(f"{prefix}/b4/conv2", c4, c4),
            BatchNorm2d(f"{prefix}/b4/bn", c4),
            ReLU(),
            MaxPool2x2(),
            Dropout(rate),
            GlobalAvgPool(),
        ]
    )


def build_camera_tower(prefix: str, config: ModelConfig) -> Sequential:
    """Five conv blocks (2,2,3,3,3 convs), pool + dropout per block, GAP."""
    rate = config.dropout_rate
    stack = []
    c_in = 3
    for b, (c_out, n_convs) in enumerate(
        zip(config.tower_channels, _TOWER_CONVS_PER_BLOCK), start=1
    ):
        for i in range(1, n_convs + 1):
            stack.append(Conv2d(f"{prefix}/b{b}/conv{i}", c_in, c_out))
            stack.append(ReLU())
            c_in = c_out
        stack.append(MaxPool2x2())
        stack.append(Dropout(rate))
    stack.append(GlobalAvgPool())
    return Sequential(stack)


def trace_shapes(seq: Sequential, x: np.ndarray, params: dict):
    """Layer-by-layer output shapes for a deterministic forward pass."""
    rows = []
    for layer in seq.layers:
        x, _ = layer.forward(x, params, INFER_DETERMINISTIC, None)
        rows.append((type(layer).__name__, tuple(x.shape[1:])))
    return rows


def decide(probs: np.ndarray) -> np.ndarray:
    """Class decisions with exact ties resolved to class 1 ("unsafe")."""
    probs = np.asarray(probs)
    return np.where(probs[:, 0] > probs[:, 1], 0, 1).astype(np.int64)


def _check_input(name, arr, expected_shape):
    if tuple(arr.shape[1:]) != tuple(expected_shape):
        raise DataValidationError(
            f"{name} input shape {tuple(arr.shape[1:])} does not match "
            f"configured {tuple(expected_shape)}"
        )


class EarlyFusionModel:
    """Concatenated audio/left/right embeddings into one softmax head."""

    param_prefix = ""

    def __init__(self, config: ModelConfig):
        if config.fusion != "early":
            raise ConfigurationError("EarlyFusionModel requires fusion='early'")
        self.config = config
        self.audio_encoder = build_audio_encoder("audio_encoder", config)
        if config.share_tower_weights:
            self.tower_left = build_camera_tower("tower", config)
            self.tower_right = self.tower_left
        else:
            self.tower_left = build_camera_tower("tower_left", config)
            self.tower_right = build_camera_tower("tower_right", config)
        emb = config.embedding_dim
        self.head = Sequential(
            [
                Dense("head/fc1", 3 * emb, config.head_width),
                ReLU(),
                Dropout(config.dropout_rate),
                Dense("head/fc2", config.head_width, N_CLASSES, zero_init=True),
            ]
        )

    @property
    def trainable_units(self):
        return [("model", self)]

    def init_params(self, rng, dtype=np.float32) -> dict:
        params = {}
        self.audio_encoder.init(params, rng, dtype)
        self.tower_left.init(params, rng, dtype)
        if self.tower_right is not self.tower_left:
            self.tower_right.init(params, rng, dtype)
        self.head.init(params, rng, dtype)
        return params

    def forward_logits(self, batch: SampleBatch, params, mode, rng=None):
        _check_input("audio", batch.audio, self.config.audio_input_shape)
        _check_input("left", batch.left, self.config.image_input_shape)
        _check_input("right", batch.right, self.config.image_input_shape)
        ea, ca = self.audio_encoder.forward(batch.audio, params, mode, rng)
        el, cl = self.tower_left.forward(batch.left, params, mode, rng)
        er, cr = self.tower_right.forward(batch.right, params, mode, rng)
        z = np.concatenate([ea, el, er], axis=1)
        logits, ch = self.head.forward(z, params, mode, rng)
        return logits, (ca, cl, cr, ch)

    def forward_probs(self, batch, params, mode, rng=None):
        logits, _ = self.forward_logits(batch, params, mode, rng)
        return softmax(logits)

    def loss_and_grads(self, batch, params, mode, rng=None):
        logits, caches = self.forward_logits(batch, params, mode, rng)
        loss, probs, dlogits = softmax_cross_entropy(logits, batch.labels)
        ca, cl, cr, ch = caches
        grads = {}
        dz = self.head.backward(dlogits, params, ch, grads)
        emb = self.config.embedding_dim
        self.tower_right.backward(dz[:, 2 * emb :], params, cr, grads)
        self.tower_left.backward(dz[:, emb : 2 * emb], params, cl, grads)
        self.audio_encoder.backward(dz[:, :emb], params, ca, grads)
        return loss, probs, grads


class AudioBranch:
    """Standalone audio classifier: encoder then a two-way dense head."""

    name = "audio"
    param_prefix = "audio_branch/"

    def __init__(self, config: ModelConfig):
        self.config = config
        self.encoder = build_audio_encoder("audio_branch/encoder", config)
        self.head = Dense("audio_branch/head", config.embedding_dim, N_CLASSES, zero_init=True)

    def init_params(self, params, rng, dtype):
        self.encoder.init(params, rng, dtype)
        self.head.init(params, rng, dtype)

    def forward_logits(self, batch, params, mode, rng=None):
        _check_input("audio", batch.audio, self.config.audio_input_shape)
        emb, ce = self.encoder.forward(batch.audio, params, mode, rng)
        logits, ch = self.head.forward(emb, params, mode, rng)
        return logits, (ce, ch)

    def forward_probs(self, batch, params, mode, rng=None):
        return softmax(self.forward_logits(batch, params, mode, rng)[0])

    def loss_and_grads(self, batch, params, mode, rng=None):
        logits, (ce, ch) = self.forward_logits(batch, params, mode, rng)
        loss, probs, dlogits = softmax_cross_entropy(logits, batch.labels)
        grads = {}
        demb = self.head.backward(dlogits, params, ch, grads)
        self.encoder.backward(demb, params, ce, grads)
        return loss, probs, grads


class VisionBranch:
    """Standalone stereo classifier over concatenated tower embeddings."""

    name = "vision"
    param_prefix = "vision_branch/"

    def __init__(self, config: ModelConfig):
        self.config = config
        if config.share_tower_weights:
            self.tower_left = build_camera_tower("vision_branch/tower", config)
            self.tower_right = self.tower_left
        else:
            self.tower_left = build_camera_tower("vision_branch/tower_left", config)
            self.tower_right = build_camera_tower("vision_branch/tower_right", config)
        emb = config.embedding_dim
        self.head = Sequential(
            [
                Dense("vision_branch/head/fc1", 2 * emb, config.head_width),
                ReLU(),
                Dropout(config.dropout_rate),
                Dense("vision_branch/head/fc2", config.head_width, N_CLASSES, zero_init=True),
            ]
        )

    def init_params(self, params, rng, dtype):
        self.tower_left.init(params, rng, dtype)
        if self.tower_right is not self.tower_left:
            self.tower_right.init(params, rng, dtype)
        self.head.init(params, rng, dtype)

    def forward_logits(self, batch, params, mode, rng=None):
        _check_input("left", batch.left, self.config.image_input_shape)
        _check_input("right", batch.right, self.config.image_input_shape)
        el, cl = self.tower_left.forward(batch.left, params, mode, rng)
        er, cr = self.tower_right.forward(batch.right, params, mode, rng)
        z = np.concatenate([el, er], axis=1)
        logits, ch = self.head.forward(z, params, mode, rng)
        return logits, (cl, cr, ch)

    def forward_probs(self, batch, params, mode, rng=None):
        return softmax(self.forward_logits(batch, params, mode, rng)[0])

    def loss_and_grads(self, batch, params, mode, rng=None):
        logits, (cl, cr, ch) = self.forward_logits(batch, params, mode, rng)
        loss, probs, dlogits = softmax_cross_entropy(logits, batch.labels)
        grads = {}
        dz = self.head.backward(dlogits, params, ch, grads)
        emb = self.config.embedding_dim
        self.tower_right.backward(dz[:, emb:], params, cr, grads)
        self.tower_left.backward(dz[:, :emb], params, cl, grads)
        return loss, probs, grads


class LateFusionModel:
    """Mean of the audio-branch and vision-branch probability vectors."""

    def __init__(self, config: ModelConfig):
        if config.fusion != "late":
            raise ConfigurationError("LateFusionModel requires fusion='late'")
        self.config = config
        self.audio_branch = AudioBranch(config)
        self.vision_branch = VisionBranch(config)

    @property
    def trainable_units(self):
        return [("audio", self.audio_branch), ("vision", self.vision_branch)]

    def init_params(self, rng, dtype=np.float32) -> dict:
        params = {}
        self.audio_branch.init_params(params, rng, dtype)
        self.vision_branch.init_params(params, rng, dtype)
        return params

    def forward_probs(self, batch, params, mode, rng=None):
        pa = self.audio_branch.forward_probs(batch, params, mode, rng)
        pv = self.vision_branch.forward_probs(batch, params, mode, rng)
        return fuse_probabilities(pa, pv)


def fuse_probabilities(probs_audio: np.ndarray, probs_vision: np.ndarray) -> np.ndarray:
    """Arithmetic mean of two branch probability vectors."""
    return 0.5 * (np.asarray(probs_audio) + np.asarray(probs_vision))


def build_model(config: ModelConfig):
    if config.fusion == "early":
        return EarlyFusionModel(config)
    return LateFusionModel(config)


def apply_pretrained_tower_weights(params: dict, weights: dict):
    """Overwrite camera-tower parameters with externally trained values.

    Only keys that already exist (tower convs) may be supplied; shapes must
    match exactly.  The audio encoder is deliberately not loadable here.
    """
    for key, value in weights.items():
        if "tower" not in key:
            raise ConfigurationError(f"{key!r} is not a camera-tower parameter")
        if key not in params:
            raise ConfigurationError(f"unknown parameter {key!r}")
        value = np.asarray(value)
        if value.shape != params[key].shape:
            raise ConfigurationError(
                f"{key!r}: shape {value.shape} does not match {params[key].shape}"
            )
        params[key] = value.astype(params[key].dtype)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    stats: Optional[StandardizerStats]
    history: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    np.lib.format.write_array(buf, arr, version=(1, 0))
    return buf.getvalue()


def save_checkpoint(path, checkpoint: Checkpoint):
    """Write a zip-of-npy container with frozen timestamps and sorted entry
    order, so identical contents produce identical bytes."""
    entries = {
        "__meta__": np.array(
            json.dumps(
                {
                    "format_version": CHECKPOINT_VERSION,
                    "config": checkpoint.config.to_dict(),
                    "history": checkpoint.history,
                    "meta": checkpoint.meta,
                },
                sort_keys=True,
            )
        )
    }
    for key, value in checkpoint.params.items():
        entries[f"params/{key}"] = value
    if checkpoint.stats is not None:
        for key, value in checkpoint.stats.to_dict().items():
            entries[f"stats/{key}"] = np.asarray(value)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            zf.writestr(info, _npy_bytes(entries[name]))


def load_checkpoint(path) -> Checkpoint:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as err:
        raise DataValidationError(f"{path}: unreadable checkpoint ({err})")
    names = set(archive.files)
    if "__meta__" not in names:
        raise DataValidationError(f"{path}: not a checkpoint (missing metadata entry)")
    try:
        meta = json.loads(str(archive["__meta__"].reshape(())))
    except (json.JSONDecodeError, ValueError) as err:
        raise DataValidationError(f"{path}: corrupt checkpoint metadata ({err})")
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataValidationError(
            f"{path}: unsupported checkpoint format version {version!r}"
        )
    params = {
        name[len("params/") :]: archive[name] for name in names if name.startswith("params/")
    }
    stats_entries = {
        name[len("stats/") :]: archive[name] for name in names if name.startswith("stats/")
    }
    stats = StandardizerStats.from_dict(stats_entries) if stats_entries else None
    return Checkpoint(
        config=ModelConfig.from_dict(meta["config"]),
        params=params,
        stats=stats,
        history=meta.get("history", {}),
        meta=meta.get("meta", {}),
    )
