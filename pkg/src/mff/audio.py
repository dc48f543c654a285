"""Waveform-to-feature extraction: log-Mel-spectrograms and MFCCs.

All clips are mono 16 kHz, padded or truncated to exactly one second
before framing, so every feature matrix has a fixed shape per config:
128x44 for the default mel path, 24x98 for the default MFCC path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import ConfigurationError, DataValidationError

SAMPLE_RATE_HZ = 16_000
CLIP_SAMPLES = SAMPLE_RATE_HZ  # fixed 1-second clips


def hz_to_mel(f_hz):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=float) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=float) / 2595.0) - 1.0)


@dataclass(frozen=True)
class WaveformClip:
    """Mono audio samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataValidationError(
                f"clip {self.source_id!r}: expected mono samples, got shape {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise DataValidationError(f"clip {self.source_id!r}: non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0 + 1e-12:
            raise DataValidationError(
                f"clip {self.source_id!r}: amplitude exceeds 1 "
                f"(max {np.max(np.abs(samples)):.6g})"
            )
        if self.sample_rate_hz <= 0:
            raise DataValidationError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)


def pad_to_one_second(clip: WaveformClip) -> WaveformClip:
    """Zero-pad at the end (or truncate) to exactly sample_rate_hz samples."""
    n = clip.sample_rate_hz
    samples = clip.samples
    if samples.size < n:
        samples = np.concatenate([samples, np.zeros(n - samples.size)])
    elif samples.size > n:
        samples = samples[:n]
    return WaveformClip(samples, clip.sample_rate_hz, clip.source_id)


def read_wav_clip(path, source_id: Optional[str] = None) -> WaveformClip:
    """Read a PCM WAV file: 16-bit signed, mono, 16 kHz. Anything else is rejected."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE_HZ:
        raise DataValidationError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE_HZ}")
    if data.dtype != np.int16:
        raise DataValidationError(f"{path}: sample format {data.dtype}, expected 16-bit PCM")
    if data.ndim != 1:
        raise DataValidationError(f"{path}: {data.shape[1]} channels, expected mono")
    samples = data.astype(np.float64) / 32768.0
    return WaveformClip(samples, rate, source_id if source_id is not None else str(path))


def write_wav_clip(path, clip: WaveformClip):
    """Write a clip back out as 16-bit PCM (inverse of read_wav_clip)."""
    data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, clip.sample_rate_hz, data)


@dataclass(frozen=True)
class FeatureConfig:
    """Parameters of one feature path (mel or mfcc)."""

    kind: str  # "mel" | "mfcc"
    window_ms: float
    hop_ms: float
    n_mels: int
    fft_size: int
    n_coeffs: Optional[int] = None  # mfcc only
    log_floor: float = 1e-10
    fmin_hz: float = 0.0
    fmax_hz: float = SAMPLE_RATE_HZ / 2
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        if self.kind not in ("mel", "mfcc"):
            raise ConfigurationError(f"unknown feature kind {self.kind!r}")
        if self.hop_ms <= 0 or self.window_ms <= 0:
            raise ConfigurationError("window_ms and hop_ms must be positive")
        if self.hop_ms > self.window_ms:
            raise ConfigurationError(
                f"hop_ms ({self.hop_ms}) must not exceed window_ms ({self.window_ms})"
            )
        if self.kind == "mfcc":
            if self.n_coeffs is None:
                raise ConfigurationError("mfcc config requires n_coeffs")
            if self.n_coeffs > self.n_mels:
                raise ConfigurationError(
                    f"n_coeffs ({self.n_coeffs}) must not exceed n_mels ({self.n_mels})"
                )
        if not (0.0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ConfigurationError(
                f"need 0 <= fmin ({self.fmin_hz}) < fmax ({self.fmax_hz}) <= Nyquist"
            )
        if self.log_floor <= 0:
            raise ConfigurationError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * self.sample_rate_hz / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000.0))

    @property
    def n_rows(self) -> int:
        """Feature bins per frame: mel bands, or kept MFCC coefficients."""
        return self.n_mels if self.kind == "mel" else int(self.n_coeffs)

    @property
    def n_frames(self) -> int:
        """Frames produced by a 1-second clip under this config."""
        return frame_count(CLIP_SAMPLES, self.window_samples, self.hop_samples)


# Default (full-scale) feature paths.  The mel hop of 22.5 ms is the unique
# round value giving 44 frames from one second; 512 is the smallest power of
# two covering the 400-sample window.
MEL_CONFIG = FeatureConfig(
    kind="mel", window_ms=25.0, hop_ms=22.5, n_mels=128, fft_size=512
)
MFCC_CONFIG = FeatureConfig(
    kind="mfcc", window_ms=25.0, hop_ms=10.0, n_mels=24, n_coeffs=24, fft_size=512
)

# Tiny-scale presets for desk runs: 32x16 mel, 24x25 mfcc.
MEL_TINY_CONFIG = FeatureConfig(
    kind="mel", window_ms=62.5, hop_ms=62.5, n_mels=32, fft_size=1024
)
MFCC_TINY_CONFIG = FeatureConfig(
    kind="mfcc", window_ms=40.0, hop_ms=40.0, n_mels=24, n_coeffs=24, fft_size=1024
)


def feature_config(kind: str, scale: str = "full") -> FeatureConfig:
    """Look up the preset config for a feature kind at a model scale."""
    try:
        return {
            ("mel", "full"): MEL_CONFIG,
            ("mfcc", "full"): MFCC_CONFIG,
            ("mel", "tiny"): MEL_TINY_CONFIG,
            ("mfcc", "tiny"): MFCC_TINY_CONFIG,
        }[(kind, scale)]
    except KeyError:
        raise ConfigurationError(f"no feature preset for kind={kind!r}, scale={scale!r}")


@dataclass(frozen=True)
class SpectralFeature:
    """2-D time-frequency matrix: rows = feature bins, cols = time frames."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataValidationError(f"feature must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataValidationError("feature contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """Number of full windows: floor((N - W) / H) + 1."""
    if window > n_samples:
        raise ConfigurationError(
            f"window of {window} samples longer than clip of {n_samples}"
        )
    return (n_samples - window) // hop + 1


def frame_and_window(clip: WaveformClip, window_ms: float, hop_ms: float) -> np.ndarray:
    """Slice a clip into Hann-windowed frames, shape (n_frames, window_samples)."""
    sr = clip.sample_rate_hz
    window = int(round(window_ms * sr / 1000.0))
    hop = int(round(hop_ms * sr / 1000.0))
    if hop <= 0 or hop > window:
        raise ConfigurationError(f"invalid framing: window={window}, hop={hop} samples")
    n = frame_count(clip.samples.size, window, hop)
    offsets = np.arange(n) * hop
    frames = clip.samples[offsets[:, None] + np.arange(window)[None, :]]
    return frames * get_window("hann", window, fftbins=True)[None, :]


def mel_filterbank(
    n_mels: int,
    fft_size: int,
    sample_rate: int = SAMPLE_RATE_HZ,
    fmin: float = 0.0,
    fmax: float = SAMPLE_RATE_HZ / 2,
) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, fft_size // 2 + 1).

    Each triangle is integrated over every FFT bin's frequency band rather
    than point-sampled at bin centers, so narrow low-frequency filters keep
    support even at coarse FFT resolutions.  Rows are non-negative and every
    row has at least one positive entry.
    """
    n_bins = fft_size // 2 + 1
    bin_hz = sample_rate / fft_size
    bin_centers = np.arange(n_bins) * bin_hz
    usable = np.count_nonzero((bin_centers >= fmin) & (bin_centers <= fmax))
    if n_mels > usable:
        raise ConfigurationError(
            f"n_mels={n_mels} too large for fft_size={fft_size} over "
            f"[{fmin:.0f}, {fmax:.0f}] Hz ({usable} usable bins)"
        )
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))

    # Average of the unit triangle (lo, mid, hi) over each bin band
    # [center - bin_hz/2, center + bin_hz/2].
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    band_lo = bin_centers[None, :] - bin_hz / 2
    band_hi = bin_centers[None, :] + bin_hz / 2

    def _ramp_integral(a, b, x0, x1):
        # Integral over [x0, x1] of the linear ramp that is 0 at a and 1 at b,
        # clipped to [min(a,b), max(a,b)].
        left, right = np.minimum(a, b), np.maximum(a, b)
        u = np.clip(x0, left, right)
        v = np.clip(x1, left, right)
        return (v - u) * ((u + v) / 2 - a) / (b - a)

    rising = _ramp_integral(lo, mid, band_lo, np.minimum(band_hi, mid))
    falling = _ramp_integral(hi, mid, np.maximum(band_lo, mid), band_hi)
    fb = (rising + falling) / bin_hz
    return np.maximum(fb, 0.0)


def mel_center_frequencies_hz(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    edges = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(edges[1:-1])


def _power_spectrum(clip: WaveformClip, config: FeatureConfig) -> np.ndarray:
    frames = frame_and_window(clip, config.window_ms, config.hop_ms)
    if config.fft_size < frames.shape[1]:
        raise ConfigurationError(
            f"fft_size {config.fft_size} smaller than window of {frames.shape[1]} samples"
        )
    spectrum = np.fft.rfft(frames, n=config.fft_size, axis=1)
    return np.abs(spectrum) ** 2


def _log_mel_energies(clip: WaveformClip, config: FeatureConfig) -> np.ndarray:
    clip = pad_to_one_second(clip)
    power = _power_spectrum(clip, config)  # (frames, bins)
    fb = mel_filterbank(
        config.n_mels, config.fft_size, config.sample_rate_hz, config.fmin_hz, config.fmax_hz
    )
    energies = fb @ power.T  # (n_mels, frames)
    return np.log(np.maximum(energies, config.log_floor))


def log_mel_spectrogram(clip: WaveformClip, config: FeatureConfig = MEL_CONFIG) -> SpectralFeature:
    """Log mel filterbank energies: log(max(filterbank @ power, log_floor))."""
    if config.kind != "mel":
        raise ConfigurationError(f"log_mel_spectrogram needs a mel config, got {config.kind!r}")
    return SpectralFeature(_log_mel_energies(clip, config), "mel")


def mfcc(clip: WaveformClip, config: FeatureConfig = MFCC_CONFIG) -> SpectralFeature:
    """Orthonormal DCT-II of the log mel energies, per frame, all coefficients kept."""
    if config.kind != "mfcc":
        raise ConfigurationError(f"mfcc needs an mfcc config, got {config.kind!r}")
    log_energies = _log_mel_energies(clip, config)
    coeffs = scipy.fft.dct(log_energies, type=2, norm="ortho", axis=0)
    return SpectralFeature(coeffs[: config.n_coeffs], "mfcc")


def extract_feature(clip: WaveformClip, config: FeatureConfig) -> SpectralFeature:
    """Dispatch on config.kind."""
    if config.kind == "mel":
        return log_mel_spectrogram(clip, config)
    return mfcc(clip, config)
