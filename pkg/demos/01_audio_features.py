"""
Spoken-command clips and their spectral features
=================================================

Synthesizes one "go" and one "stop" clip, runs both feature paths
(log-mel spectrogram and MFCC), and prints what the classifier sees.
"""

from pathlib import Path

import numpy as np

from mff import audio, dataset

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# Two one-second command clips: "go" sweeps 300->900 Hz, "stop" sweeps back down.
go = dataset.synth_command_audio("go", seed=1)
stop = dataset.synth_command_audio("stop", seed=1)
print(f"clip length: {go.samples.size} samples at {go.sample_rate_hz} Hz")

# The mel path: 128 bands x 44 frames per clip.
for name, clip in (("go", go), ("stop", stop)):
    feat = audio.log_mel_spectrogram(clip, audio.MEL_CONFIG)
    print(f"{name}: mel feature {feat.shape}, range [{feat.values.min():.1f}, {feat.values.max():.1f}]")

# Where does the energy sit over time?  The chirp direction separates the
# two commands: "go" climbs to higher mel bands, "stop" descends.
for name, clip in (("go", go), ("stop", stop)):
    feat = audio.log_mel_spectrogram(clip, audio.MEL_CONFIG)
    peaks = np.argmax(feat.values, axis=0)
    print(f"{name}: peak mel band frame 0 -> {peaks[0]}, frame 43 -> {peaks[-1]}")

# The mfcc path trades frequency resolution for decorrelated coefficients.
feat = audio.mfcc(go, audio.MFCC_CONFIG)
print(f"mfcc feature: {feat.shape} (24 coefficients x 98 frames)")
print("first frame, first 6 coefficients:", np.round(feat.values[:6, 0], 2))

# Both paths are deterministic given the clip.
again = audio.log_mel_spectrogram(go, audio.MEL_CONFIG)
assert np.array_equal(again.values, audio.log_mel_spectrogram(go, audio.MEL_CONFIG).values)
print("feature extraction is deterministic")

# Save the two mel spectrograms side by side for a visual check.
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
for ax, (name, clip) in zip(axes, (("go", go), ("stop", stop))):
    feat = audio.log_mel_spectrogram(clip, audio.MEL_CONFIG)
    ax.imshow(feat.values, aspect="auto", origin="lower")
    ax.set_title(f'"{name}"')
    ax.set_xlabel("frame")
axes[0].set_ylabel("mel band")
fig.tight_layout()
fig.savefig(OUT / "command_spectrograms.png", dpi=120)
print(f"wrote {OUT / 'command_spectrograms.png'}")
