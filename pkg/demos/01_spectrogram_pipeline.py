"""From a waveform to the normalized mel grid the classifier consumes.

Synthesizes a short A-major-ish chord, runs the short-time Fourier transform
(4096-sample Hann window, hop 512), projects the power grid through the
256-band mel filter bank, and converts to the per-clip normalized decibel
scale. Writes PGM renders you can open with any image viewer.
"""

import os

from melharm.audio_io import synth_tone_stack
from melharm.spectro import (
    StftConfig,
    build_mel_filterbank,
    export_pgm,
    mel_spectrogram,
    stft,
    to_decibel_normalized,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# A 6-second chord: A3 + C#4 + E4, each with a few harmonics.
clip = synth_tone_stack(
    fundamentals=[220.0, 277.18, 329.63],
    partial_counts=[8, 6, 6],
    amplitudes=[1.0, 0.7, 0.7],
    duration_s=6.0,
    seed=0,
)
print(f"waveform: {len(clip)} samples at {clip.sample_rate_hz} Hz")

cfg = StftConfig()
power = stft(clip, cfg)
print(f"STFT power grid: {power.grid.shape} (bins x frames), "
      f"{power.bin_hz:.3f} Hz per bin")

bank = build_mel_filterbank()
mel = to_decibel_normalized(mel_spectrogram(power, bank))
print(f"normalized mel grid: {mel.grid.shape}, "
      f"range [{mel.grid.min():.3f}, {mel.grid.max():.3f}]")

# Renders: low frequencies at the bottom, time left to right.
export_pgm(os.path.join(OUT, "chord_mel.pgm"), mel.grid[::-1])
print(f"wrote {OUT}/chord_mel.pgm")
