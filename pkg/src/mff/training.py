"""Adam training with early stopping, k-fold cross-validation, and metric
evaluation for the fusion models.

Late-fusion runs train the audio and vision branches as two independent
phases (each with its own optimizer state and early stopping); evaluation
then fuses their probability vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dataset, models
from .dataset import SAFETY_CLASSES, DatasetManifest, SampleBatch, derive_seed
from .errors import ConfigurationError, NumericError
from .layers import INFER_DETERMINISTIC, TRAIN, trainable_keys
from .models import Checkpoint, ModelConfig

DEFAULT_LEARNING_RATE = 0.01
TINY_LEARNING_RATE = 1e-3
EVAL_CHUNK = 64


@dataclass(frozen=True)
class Hyperparams:
    batch_size: int = 64
    learning_rate: float = DEFAULT_LEARNING_RATE
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "max_epochs", "patience", "epsilon"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.patience < self.max_epochs:
            raise ConfigurationError("patience must be smaller than max_epochs")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("beta1/beta2 must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Hyperparams":
        return cls(**obj)


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class, floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    picked = np.clip(probs[np.arange(labels.size), labels], 1e-12, None)
    return float(-np.mean(np.log(picked)))


class Adam:
    """Adaptive-moment optimizer over an explicit list of parameter keys."""

    def __init__(self, keys: Sequence[str], hp: Hyperparams):
        self.keys = list(keys)
        self.hp = hp
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        hp = self.hp
        self.t += 1
        bias1 = 1.0 - hp.beta1 ** self.t
        bias2 = 1.0 - hp.beta2 ** self.t
        for key in self.keys:
            g = grads[key]
            m = self.m.get(key)
            if m is None:
                m = np.zeros_like(params[key])
                self.m[key] = m
                self.v[key] = np.zeros_like(params[key])
            v = self.v[key]
            m *= hp.beta1
            m += (1.0 - hp.beta1) * g
            v *= hp.beta2
            v += (1.0 - hp.beta2) * np.square(g)
            params[key] = params[key] - hp.learning_rate * (m / bias1) / (
                np.sqrt(v / bias2) + hp.epsilon
            )


@dataclass
class TrainingHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "best_epoch": self.best_epoch,
        }

    def rows(self):
        return zip(self.epochs, self.train_loss, self.val_loss, self.val_acc)


def write_history_csv(path, histories: dict):
    """history.csv with columns epoch,train_loss,val_loss,val_acc; multiple
    training phases (late fusion) are concatenated in phase order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,val_acc\n")
        for name in sorted(histories):
            for epoch, tl, vl, va in histories[name].rows():
                fh.write(f"{epoch},{tl:.6f},{vl:.6f},{va:.6f}\n")


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a strict
    validation-loss improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.stale = 0

    def observe(self, epoch: int, val_loss: float):
        """Returns (is_best, should_stop)."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


@dataclass
class PredictionRecord:
    id: str
    prob_safe: float
    prob_unsafe: float
    predicted: str
    label: str

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "prob_safe": self.prob_safe,
            "prob_unsafe": self.prob_unsafe,
            "predicted": self.predicted,
            "label": self.label,
        }


@dataclass
class EvalMetrics:
    accuracy: float
    per_class: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list  # confusion[i][j] = count(label i, predicted j)
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
            "n": self.n,
        }

    def summary_values(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def _safe_ratio(num, den, what):
    if den == 0:
        warnings.warn(f"{what} undefined (zero denominator); reporting 0", stacklevel=3)
        return 0.0
    return num / den


def metrics_from_predictions(labels: np.ndarray, predicted: np.ndarray) -> EvalMetrics:
    """Accuracy, per-class precision/recall/f1, macro averages, confusion."""
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    n = labels.size
    confusion = np.zeros((2, 2), dtype=np.int64)
    for i in range(2):
        for j in range(2):
            confusion[i, j] = int(np.sum((labels == i) & (predicted == j)))
    per_class = {}
    precisions, recalls, f1s = [], [], []
    for c, name in enumerate(SAFETY_CLASSES):
        tp = confusion[c, c]
        precision = _safe_ratio(tp, confusion[:, c].sum(), f"precision[{name}]")
        recall = _safe_ratio(tp, confusion[c, :].sum(), f"recall[{name}]")
        f1 = _safe_ratio(2 * precision * recall, precision + recall, f"f1[{name}]")
        per_class[name] = {
            "precision": float(precision),
            "recall": float(recall),
            "f1": float(f1),
            "support": int(confusion[c, :].sum()),
        }
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return EvalMetrics(
        accuracy=float(np.trace(confusion) / n) if n else 0.0,
        per_class=per_class,
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        confusion=confusion.tolist(),
        n=int(n),
    )


def forward_probs_chunked(model, batch: SampleBatch, params, mode, rng=None) -> np.ndarray:
    """Memory-bounded forward over the whole batch; works for models and
    individual late-fusion branches alike."""
    chunks = []
    for start in range(0, len(batch), EVAL_CHUNK):
        sub = batch.subset(np.arange(start, min(start + EVAL_CHUNK, len(batch))))
        chunks.append(model.forward_probs(sub, params, mode, rng))
    return np.concatenate(chunks, axis=0)


def _train_single_unit(
    unit,
    unit_index: int,
    params: dict,
    train_batch: SampleBatch,
    val_batch: SampleBatch,
    hp: Hyperparams,
    seed: int,
) -> TrainingHistory:
    """Run one early-stopped training phase over the unit's parameters.

    Mutates `params`: on return, the unit's entries hold the values from the
    epoch with minimal validation loss.
    """
    prefix = getattr(unit, "param_prefix", "")
    unit_keys = [k for k in params if k.startswith(prefix)]
    optimizer = Adam([k for k in trainable_keys(params) if k.startswith(prefix)], hp)
    history = TrainingHistory()
    stopper = EarlyStopper(hp.patience)
    best_params = {k: params[k].copy() for k in unit_keys}
    n = len(train_batch)
    for epoch in range(1, hp.max_epochs + 1):
        order = np.random.default_rng(derive_seed(seed, 10, unit_index, epoch)).permutation(n)
        drop_rng = np.random.default_rng(derive_seed(seed, 11, unit_index, epoch))
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, hp.batch_size)):
            sub = train_batch.subset(order[start : start + hp.batch_size])
            loss, _, grads = unit.loss_and_grads(sub, params, TRAIN, drop_rng)
            if not np.isfinite(loss):
                raise NumericError(
                    f"training loss became non-finite at epoch {epoch}, batch {b + 1}"
                )
            optimizer.step(params, grads)
            for key in optimizer.keys:
                if not np.all(np.isfinite(params[key])):
                    raise NumericError(
                        f"parameter {key!r} became non-finite at epoch {epoch}, batch {b + 1}"
                    )
            epoch_loss += loss * len(sub)
        val_probs = forward_probs_chunked(unit, val_batch, params, INFER_DETERMINISTIC)
        val_loss = cross_entropy_loss(val_probs, val_batch.labels)
        val_acc = float(np.mean(models.decide(val_probs) == val_batch.labels))
        history.epochs.append(epoch)
        history.train_loss.append(epoch_loss / n)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        is_best, should_stop = stopper.observe(epoch, val_loss)
        if is_best:
            history.best_epoch = epoch
            best_params = {k: params[k].copy() for k in unit_keys}
        if should_stop:
            break
    params.update(best_params)
    return history


def _resolve_units(model):
    """(name, unit, unit_index) triples in training order."""
    if isinstance(model, models.LateFusionModel):
        return [("audio", model.audio_branch, 0), ("vision", model.vision_branch, 1)]
    return [("model", model, 0)]


def train_fold(
    manifest: DatasetManifest,
    config: ModelConfig,
    train_indices,
    val_indices,
    hp: Hyperparams,
    seed: int,
    preloaded: Optional[SampleBatch] = None,
):
    """Train one model on train_indices with early stopping on val_indices.

    Returns (Checkpoint, histories dict).  The standardizer is fit on the
    training indices only; the checkpoint holds best-epoch parameters.
    """
    train_indices = np.asarray(train_indices, dtype=np.int64)
    val_indices = np.asarray(val_indices, dtype=np.int64)
    if np.intersect1d(train_indices, val_indices).size:
        raise ConfigurationError("train and validation indices overlap")
    fc = config.feature_config()
    if preloaded is not None:
        train_batch = preloaded.subset(train_indices)
        val_batch = preloaded.subset(val_indices)
    else:
        train_batch = dataset.load_samples(manifest, fc, config.image_size, train_indices)
        val_batch = dataset.load_samples(manifest, fc, config.image_size, val_indices)
    stats = dataset.fit_standardizer(train_batch)
    train_batch = dataset.apply_standardizer(train_batch, stats)
    val_batch = dataset.apply_standardizer(val_batch, stats)

    model = models.build_model(config)
    params = model.init_params(np.random.default_rng(derive_seed(seed, 12)), np.float32)
    histories = {}
    for name, unit, unit_index in _resolve_units(model):
        histories[name] = _train_single_unit(
            unit, unit_index, params, train_batch, val_batch, hp, seed
        )
    checkpoint = Checkpoint(
        config=config,
        params=params,
        stats=stats,
        history={name: h.to_dict() for name, h in histories.items()},
        meta={"seed": seed, "hyperparams": hp.to_dict()},
    )
    return checkpoint, histories


def evaluate(checkpoint: Checkpoint, batch: SampleBatch, ids=None):
    """Deterministic-mode evaluation; returns metrics + per-sample records."""
    model = models.build_model(checkpoint.config)
    probs = forward_probs_chunked(model, batch, checkpoint.params, INFER_DETERMINISTIC)
    predicted = models.decide(probs)
    records = [
        PredictionRecord(
            id=str(batch.ids[i]) if ids is None else str(ids[i]),
            prob_safe=float(probs[i, 0]),
            prob_unsafe=float(probs[i, 1]),
            predicted=SAFETY_CLASSES[predicted[i]],
            label=SAFETY_CLASSES[batch.labels[i]],
        )
        for i in range(len(batch))
    ]
    return metrics_from_predictions(batch.labels, predicted), records


def standardize_with(checkpoint: Checkpoint, batch: SampleBatch) -> SampleBatch:
    return dataset.apply_standardizer(batch, checkpoint.stats)


def carve_validation(labels: np.ndarray, pool: np.ndarray, seed: int):
    """Stratified 90/10 split of `pool` into (train, val) index arrays."""
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size < 2:
        raise ConfigurationError("need at least 2 samples to carve a validation set")
    k = min(10, pool.size)
    parts = dataset.stratified_partition(
        np.asarray(labels)[pool], k, np.random.default_rng(derive_seed(seed, 13))
    )
    val = pool[parts[0]]
    train = pool[np.sort(np.concatenate(parts[1:]))]
    return train, val


@dataclass
class FoldOutcome:
    fold: int
    checkpoint: Checkpoint
    histories: dict
    metrics: EvalMetrics
    records: list


def summarize_metrics(fold_metrics: Sequence[EvalMetrics]) -> dict:
    """Per-metric mean and population standard deviation across folds."""
    names = fold_metrics[0].summary_values().keys()
    table = {name: [m.summary_values()[name] for m in fold_metrics] for name in names}
    return {
        name: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        for name, vals in table.items()
    }


def cross_validate(
    manifest: DatasetManifest,
    config: ModelConfig,
    k: int,
    hp: Hyperparams,
    seed: int,
    on_fold=None,
):
    """k-fold cross-validation: each fold trains on the other k-1 (with an
    internal stratified 90/10 train/validation carve-out for early
    stopping) and is evaluated once.  Returns (fold outcomes, summary)."""
    split = dataset.split_kfold(manifest, k, seed)
    full = dataset.load_samples(manifest, config.feature_config(), config.image_size)
    labels = manifest.labels
    outcomes = []
    for f in range(k):
        test_idx = split.folds[f]
        pool = split.train_indices(f)
        train_idx, val_idx = carve_validation(labels, pool, derive_seed(seed, 14, f))
        checkpoint, histories = train_fold(
            manifest, config, train_idx, val_idx, hp, derive_seed(seed, 15, f),
            preloaded=full,
        )
        test_batch = standardize_with(checkpoint, full.subset(test_idx))
        metrics, records = evaluate(checkpoint, test_batch)
        outcome = FoldOutcome(f, checkpoint, histories, metrics, records)
        outcomes.append(outcome)
        if on_fold is not None:
            on_fold(outcome)
    return outcomes, summarize_metrics([o.metrics for o in outcomes])


def predict_probs(checkpoint: Checkpoint, batch: SampleBatch) -> np.ndarray:
    """Deterministic fused probabilities for a standardized batch."""
    model = models.build_model(checkpoint.config)
    return forward_probs_chunked(model, batch, checkpoint.params, INFER_DETERMINISTIC)
