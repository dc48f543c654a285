"""
Uncertainty from repeated dropout passes
========================================

Loads the demo checkpoint (or trains a quick one), runs Monte Carlo
dropout, and shows which predictions the model is unsure about.
"""

from pathlib import Path

import numpy as np

from mff import dataset, mc_dropout, models, plots, training

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
SEED = 17

ckpt_path = OUT / "tiny_early_mel.npz"
if not ckpt_path.is_file():
    print("training a quick checkpoint first (run demo 03 to skip this)...")
    manifest = dataset.build_manifest(32, 0.5, seed=SEED)
    pool, _ = dataset.holdout_split(manifest, 0.25, seed=SEED)
    train_idx, val_idx = training.carve_validation(manifest.labels, pool, seed=SEED)
    config = models.ModelConfig(fusion="early", feature_kind="mel", scale="tiny")
    hp = training.Hyperparams(batch_size=8, learning_rate=1e-3, max_epochs=5, patience=3)
    checkpoint, _ = training.train_fold(manifest, config, train_idx, val_idx, hp, SEED)
    models.save_checkpoint(ckpt_path, checkpoint)

checkpoint = models.load_checkpoint(ckpt_path)
config = checkpoint.config
print(f"checkpoint: {config.fusion} fusion, {config.feature_kind} features, "
      f"dropout {config.dropout_rate}")

# Fresh evaluation batch the model has never seen.
manifest = dataset.build_manifest(24, 0.5, seed=SEED + 100)
batch = training.standardize_with(
    checkpoint,
    dataset.load_samples(manifest, config.feature_config(), config.image_size),
)

# 50 stochastic passes: dropout stays on, batch-norm uses its running stats.
report = mc_dropout.mc_evaluate(checkpoint, batch, n_passes=50, seed=SEED)
acc = np.array(report.per_pass_accuracy)
print(f"\nper-pass accuracy: mean {acc.mean():.3f}, std {acc.std():.3f}, "
      f"range [{acc.min():.3f}, {acc.max():.3f}]")
print(f"ensemble accuracy (argmax of mean probabilities): {report.ensemble_accuracy:.3f}")

# Per-sample spread: a wide std marks inputs the model is genuinely unsure on.
spread = report.std_probs[:, 0]
order = np.argsort(spread)[::-1]
print("\nmost uncertain samples:")
print("id           label   predicted  mean_p_safe  std")
for i in order[:5]:
    print(f"{report.ids[i]:12s} {report.labels[i]:7s} {report.ensemble_predicted[i]:9s}"
          f"  {report.mean_probs[i, 0]:.3f}        {spread[i]:.3f}")

# A single sample can be queried directly.  Dropout masks are drawn per
# forward pass, so a solo query sees different noise than the batched run
# above -- and a saturated softmax can show zero spread despite the dropout.
one = batch.subset(np.array([int(order[0])]))
mean, std = mc_dropout.mc_predict_sample(checkpoint, one, n_passes=50, seed=SEED)
print(f"\nsingle-sample query: mean {np.round(mean, 3)}, std {np.round(std, 4)}")

mc_dropout.write_mc_report_json(OUT / "mc_report.json", report)
mc_dropout.write_mc_hist_csv(OUT / "mc_hist.csv", report)
plots.save_mc_accuracy_histogram(OUT / "mc_hist.png", report)
print(f"wrote MC report, histogram table, and figure to {OUT}")
