"""The 12 pitch-class "blinders" and what they keep.

Each pitch class (A .. G#) owns a mask over the 256 mel bands: mark every
STFT bin whose center lies within 0.5 Hz of a harmonic n*f0 of the class's
lowest fundamental, then project that binary column through the mel filter
bank. Applying the mask before convolution blinds a branch to everything but
that class's harmonic skeleton.

The demo prints per-class statistics and shows that an octave stack on A
(440 + 880 Hz) keeps more energy under the A blinder than under the
maximally mismatched D# blinder.
"""

import os

from melharm.audio_io import synth_tone_stack
from melharm.harmonics import (
    PITCH_CLASSES,
    blinded_energy,
    blinders_to_csv,
    build_all_blinders,
    harmonic_series,
    stft_indicator,
)
from melharm.spectro import (
    build_mel_filterbank,
    mel_spectrogram,
    stft,
    to_decibel_normalized,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

bank = build_mel_filterbank()
blinders = build_all_blinders(bank)

print(f"{'class':>5s} {'f0 (Hz)':>8s} {'harmonics':>9s} {'bins kept':>9s} {'mel mass':>9s}")
for (name, f0), b in zip(PITCH_CLASSES, blinders):
    series = harmonic_series(f0)
    kept = int(stft_indicator(series).sum())
    print(f"{name:>5s} {f0:8.2f} {series.frequencies.size:9d} {kept:9d} "
          f"{b.weights.sum():9.2f}")

# Octave stack on pitch class A, compared under A's and D#'s blinders.
w = synth_tone_stack([440.0, 880.0], [1, 1], [1.0, 1.0], 6.0, seed=1)
mel = to_decibel_normalized(mel_spectrogram(stft(w), bank))
e_a = blinded_energy(mel, blinders[0])
e_dsharp = blinded_energy(mel, blinders[6])
print(f"\n440+880 Hz stack: energy under A = {e_a:.1f}, "
      f"under D# = {e_dsharp:.1f} (A wins: {e_a > e_dsharp})")

blinders_to_csv(os.path.join(OUT, "blinders.csv"), blinders)
print(f"wrote {OUT}/blinders.csv")
