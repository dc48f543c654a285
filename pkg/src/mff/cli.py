"""Command-line surface: dataset building, training, evaluation, and reports."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import calibration, dataset, mc_dropout, models, plots, training
from .dataset import derive_seed
from .errors import ConfigurationError, DataValidationError, NumericError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

REPORT_ROWS = (("early", "mel"), ("early", "mfcc"), ("late", "mel"), ("late", "mfcc"))
REPORT_COLUMNS = ("Accuracy", "Precision", "Recall", "F1", "ECE")
_METRIC_KEYS = ("accuracy", "macro_precision", "macro_recall", "macro_f1", "ece_percent")


def _resolve_seed(value):
    """--seed flag, else MFF_SEED from the environment, else 0."""
    if value is not None:
        return value
    env = os.environ.get("MFF_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigurationError(f"MFF_SEED must be an integer, got {env!r}")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_config(out_dir: Path, payload: dict):
    """Frozen copy of the effective configuration for reproducibility."""
    _write_json(out_dir / "config.json", payload)


def _write_predictions(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json_obj(), sort_keys=True) + "\n")


def _read_predictions(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(training.PredictionRecord(**obj))
            except (json.JSONDecodeError, TypeError) as err:
                raise DataValidationError(f"{path}: line {line_no}: {err}")
    if not records:
        raise DataValidationError(f"{path}: no prediction records")
    return records


def _metrics_dict(metrics, records) -> dict:
    report = calibration.ece(records)
    out = dict(metrics.summary_values())
    out["ece"] = report.ece
    out["ece_percent"] = report.ece_percent
    out["n"] = metrics.n
    return out


def _write_run_dir(run_dir: Path, checkpoint, histories, metrics, records):
    run_dir.mkdir(parents=True, exist_ok=True)
    models.save_checkpoint(run_dir / "checkpoint.npz", checkpoint)
    training.write_history_csv(run_dir / "history.csv", histories)
    _write_json(run_dir / "metrics.json", _metrics_dict(metrics, records))
    _write_predictions(run_dir / "predictions.jsonl", records)


def _mean_std(dicts) -> dict:
    keys = [k for k in dicts[0] if k != "n"]
    return {
        k: {
            "mean": float(np.mean([d[k] for d in dicts])),
            "std": float(np.std([d[k] for d in dicts])),
        }
        for k in keys
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_build_dataset(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.mode == "ingest":
        if args.source is None:
            raise ConfigurationError("--mode ingest requires --source")
        source = []
        with open(args.source, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    source.append(json.loads(line))
                except json.JSONDecodeError as err:
                    raise DataValidationError(f"{args.source}: line {line_no}: {err}")
        manifest = dataset.build_manifest(0, mode="ingest", source=source, seed=seed)
    else:
        if args.n is None:
            raise ConfigurationError("synthetic mode requires --n")
        manifest = dataset.build_manifest(args.n, args.balance, seed=seed)
    dataset.write_manifest(args.out, manifest)
    print(f"wrote {len(manifest)} records to {args.out}")
    return EXIT_OK


def _model_config(args) -> models.ModelConfig:
    return models.ModelConfig(
        fusion=args.fusion,
        feature_kind=args.features,
        scale=args.scale,
        dropout_rate=args.dropout,
        share_tower_weights=not args.unshared_towers,
    )


def _hyperparams(args) -> training.Hyperparams:
    return training.Hyperparams(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        max_epochs=args.max_epochs,
        patience=args.patience,
    )


def _cv_fold_job(manifest, config, k, hp, seed, fold):
    """One cross-validation fold, self-contained so folds can run in parallel."""
    split = dataset.split_kfold(manifest, k, seed)
    test_idx = split.folds[fold]
    pool = split.train_indices(fold)
    train_idx, val_idx = training.carve_validation(
        manifest.labels, pool, derive_seed(seed, 14, fold)
    )
    checkpoint, histories = training.train_fold(
        manifest, config, train_idx, val_idx, hp, derive_seed(seed, 15, fold)
    )
    test_batch = training.standardize_with(
        checkpoint,
        dataset.load_samples(manifest, config.feature_config(), config.image_size, test_idx),
    )
    metrics, records = training.evaluate(checkpoint, test_batch)
    return fold, checkpoint, histories, metrics, records


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    config = _model_config(args)
    hp = _hyperparams(args)
    manifest = dataset.read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(
        out,
        {
            "subcommand": "train",
            "manifest": str(args.manifest),
            "model": config.to_dict(),
            "hyperparams": hp.to_dict(),
            "seed": seed,
            "folds": args.folds,
            "test_fraction": args.test_fraction,
            "jobs": args.jobs,
        },
    )

    if args.folds:
        jobs = max(1, min(args.jobs, args.folds))
        if jobs == 1:
            results = [
                _cv_fold_job(manifest, config, args.folds, hp, seed, f)
                for f in range(args.folds)
            ]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [
                    pool.submit(_cv_fold_job, manifest, config, args.folds, hp, seed, f)
                    for f in range(args.folds)
                ]
                results = [fut.result() for fut in futures]
        per_fold = []
        for fold, checkpoint, histories, metrics, records in results:
            _write_run_dir(out / f"fold_{fold}", checkpoint, histories, metrics, records)
            per_fold.append(_metrics_dict(metrics, records))
        _write_json(
            out / "summary.json",
            {"n_folds": args.folds, "seed": seed, "metrics": _mean_std(per_fold)},
        )
        acc = np.mean([d["accuracy"] for d in per_fold])
        print(f"{args.folds}-fold cross-validation done: mean accuracy {acc:.4f}")
    else:
        train_pool, test_idx = dataset.holdout_split(manifest, args.test_fraction, seed)
        train_idx, val_idx = training.carve_validation(
            manifest.labels, train_pool, derive_seed(seed, 14, 0)
        )
        checkpoint, histories = training.train_fold(
            manifest, config, train_idx, val_idx, hp, derive_seed(seed, 15, 0)
        )
        test_batch = training.standardize_with(
            checkpoint,
            dataset.load_samples(manifest, config.feature_config(), config.image_size, test_idx),
        )
        metrics, records = training.evaluate(checkpoint, test_batch)
        _write_run_dir(out, checkpoint, histories, metrics, records)
        print(f"holdout training done: test accuracy {metrics.accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    checkpoint = models.load_checkpoint(args.checkpoint)
    manifest = dataset.read_manifest(args.manifest)
    config = checkpoint.config
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(
        out,
        {
            "subcommand": "eval",
            "checkpoint": str(args.checkpoint),
            "manifest": str(args.manifest),
            "model": config.to_dict(),
        },
    )
    batch = training.standardize_with(
        checkpoint, dataset.load_samples(manifest, config.feature_config(), config.image_size)
    )
    metrics, records = training.evaluate(checkpoint, batch)
    _write_json(out / "metrics.json", _metrics_dict(metrics, records))
    _write_predictions(out / "predictions.jsonl", records)
    print(f"evaluated {metrics.n} samples: accuracy {metrics.accuracy:.4f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    records = _read_predictions(args.predictions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(
        out,
        {
            "subcommand": "calibrate",
            "predictions": str(args.predictions),
            "bins": args.bins,
        },
    )
    report = calibration.ece(records, args.bins)
    calibration.write_report_json(out / "report.json", report)
    calibration.write_bins_csv(out / "bins.csv", report)
    plots.save_reliability_diagram(out / "reliability.png", report)
    plots.save_confidence_histogram(
        out / "confidence_hist.png", calibration.confidence_histogram(records, args.bins)
    )
    print(f"ECE over {report.n} predictions: {report.ece_percent:.2f}%")
    return EXIT_OK


def cmd_mc(args) -> int:
    seed = _resolve_seed(args.seed)
    checkpoint = models.load_checkpoint(args.checkpoint)
    manifest = dataset.read_manifest(args.manifest)
    config = checkpoint.config
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(
        out,
        {
            "subcommand": "mc",
            "checkpoint": str(args.checkpoint),
            "manifest": str(args.manifest),
            "passes": args.passes,
            "seed": seed,
        },
    )
    batch = training.standardize_with(
        checkpoint, dataset.load_samples(manifest, config.feature_config(), config.image_size)
    )
    report = mc_dropout.mc_evaluate(checkpoint, batch, n_passes=args.passes, seed=seed)
    mc_dropout.write_mc_report_json(out / "mc_report.json", report)
    mc_dropout.write_mc_hist_csv(out / "mc_hist.csv", report)
    plots.save_mc_accuracy_histogram(out / "mc_hist.png", report)
    print(
        f"{report.n_passes} passes: ensemble accuracy {report.ensemble_accuracy:.4f}"
    )
    return EXIT_OK


def _load_run_metrics(run_dir: Path):
    """Mean metrics for a run directory: summary.json (CV) or metrics.json (holdout)."""
    summary = run_dir / "summary.json"
    if summary.is_file():
        data = json.loads(summary.read_text(encoding="utf-8"))["metrics"]
        return {k: data[k]["mean"] for k in _METRIC_KEYS}
    single = run_dir / "metrics.json"
    if single.is_file():
        data = json.loads(single.read_text(encoding="utf-8"))
        return {k: data[k] for k in _METRIC_KEYS}
    return None


def cmd_report(args) -> int:
    runs = Path(args.runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for fusion, features in REPORT_ROWS:
        name = f"{fusion}-{features}"
        metrics = _load_run_metrics(runs / name)
        if metrics is None:
            print(f"warning: run {name} not found under {runs}", file=sys.stderr)
            rows.append((name, ["absent"] * len(REPORT_COLUMNS)))
        else:
            # accuracy/precision/recall/f1 as percentages; ece_percent already is one
            cells = [f"{100.0 * metrics[k]:.2f}" for k in _METRIC_KEYS[:4]]
            cells.append(f"{metrics['ece_percent']:.2f}")
            rows.append((name, cells))

    header = ["Run", *REPORT_COLUMNS]
    md_lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    csv_lines = [",".join(h.lower() for h in header)]
    for name, cells in rows:
        md_lines.append("| " + " | ".join([name, *cells]) + " |")
        csv_lines.append(",".join([name, *cells]))
    (out / "report.md").write_text("\n".join(md_lines) + "\n", encoding="utf-8")
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    print(f"wrote report for {len(rows)} runs to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mff",
        description="Audio-visual fusion classifier for spoken-command scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="write a labeled pair manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["synthetic", "ingest"], default="synthetic")
    p.add_argument("--source", help="JSONL of candidate records (ingest mode)")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train a fusion model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fusion", choices=list(models.FUSIONS), default="early")
    p.add_argument("--features", choices=["mel", "mfcc"], default="mel")
    p.add_argument("--scale", choices=list(models.SCALES), default="full")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--unshared-towers", action="store_true")
    p.add_argument("--folds", type=int, default=0, help="k-fold CV; 0 = holdout split")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", "--lr", type=float, default=0.01)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1, help="fold-level parallelism")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="calibration report from predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("mc", help="Monte Carlo dropout uncertainty report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--passes", type=int, default=mc_dropout.DEFAULT_PASSES)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("report", help="fusion x feature results grid")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
