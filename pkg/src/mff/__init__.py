"""Audio-visual safety classifier: paired command audio + stereo road frames."""

from .audio import (
    CLIP_SAMPLES,
    MEL_CONFIG,
    MFCC_CONFIG,
    SAMPLE_RATE_HZ,
    FeatureConfig,
    SpectralFeature,
    WaveformClip,
    extract_feature,
    feature_config,
    log_mel_spectrogram,
    mfcc,
    read_wav_clip,
    write_wav_clip,
)
from .calibration import (
    CalibrationReport,
    ConfidenceHistogram,
    confidence_histogram,
    ece,
    reliability_bins,
)
from .dataset import (
    COMMANDS,
    SAFETY_CLASSES,
    DatasetManifest,
    FoldSplit,
    ManifestRecord,
    SampleBatch,
    ScenarioLabel,
    StandardizerStats,
    apply_standardizer,
    build_manifest,
    derive_seed,
    fit_standardizer,
    holdout_split,
    label_scenario,
    load_samples,
    read_manifest,
    split_kfold,
    synth_command_audio,
    synth_stereo_frames,
    write_manifest,
)
from .errors import ConfigurationError, DataValidationError, MffError, NumericError
from .mc_dropout import MCDropoutReport, mc_evaluate, mc_predict_sample, mc_probs
from .models import (
    Checkpoint,
    ModelConfig,
    build_model,
    decide,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    EvalMetrics,
    Hyperparams,
    PredictionRecord,
    carve_validation,
    cross_validate,
    evaluate,
    predict_probs,
    standardize_with,
    train_fold,
)

__version__ = "0.1.0"

__all__ = [
    "CLIP_SAMPLES",
    "COMMANDS",
    "MEL_CONFIG",
    "MFCC_CONFIG",
    "SAFETY_CLASSES",
    "SAMPLE_RATE_HZ",
    "CalibrationReport",
    "Checkpoint",
    "ConfidenceHistogram",
    "ConfigurationError",
    "DataValidationError",
    "DatasetManifest",
    "EvalMetrics",
    "FeatureConfig",
    "FoldSplit",
    "Hyperparams",
    "MCDropoutReport",
    "ManifestRecord",
    "MffError",
    "ModelConfig",
    "NumericError",
    "PredictionRecord",
    "SampleBatch",
    "ScenarioLabel",
    "SpectralFeature",
    "StandardizerStats",
    "WaveformClip",
    "apply_standardizer",
    "build_manifest",
    "build_model",
    "carve_validation",
    "confidence_histogram",
    "cross_validate",
    "decide",
    "derive_seed",
    "ece",
    "evaluate",
    "extract_feature",
    "feature_config",
    "fit_standardizer",
    "holdout_split",
    "label_scenario",
    "load_checkpoint",
    "load_samples",
    "log_mel_spectrogram",
    "mc_evaluate",
    "mc_predict_sample",
    "mc_probs",
    "mfcc",
    "predict_probs",
    "read_manifest",
    "read_wav_clip",
    "reliability_bins",
    "save_checkpoint",
    "split_kfold",
    "standardize_with",
    "synth_command_audio",
    "synth_stereo_frames",
    "train_fold",
    "write_manifest",
    "write_wav_clip",
]
