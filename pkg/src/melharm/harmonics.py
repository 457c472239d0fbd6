"""Pitch-class harmonics blinders.

For each of the 12 pitch classes, collect the harmonic series of its lowest
fundamental up to Nyquist, mark STFT bins whose center falls within 0.5 Hz of
a harmonic, and project the binary indicator through the mel filter bank.
The resulting 256-element weight column masks the mel spectrogram before
convolution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .spectro import MelFilterBank, MelSpectrogram, SizeError

# Lowest fundamental of each pitch class (Hz), ordered A .. G#.
PITCH_CLASSES: tuple[tuple[str, float], ...] = (
    ("A", 27.50),
    ("A#", 29.14),
    ("B", 30.87),
    ("C", 32.70),
    ("C#", 34.65),
    ("D", 36.71),
    ("D#", 38.89),
    ("E", 41.20),
    ("F", 43.65),
    ("F#", 46.25),
    ("G", 49.00),
    ("G#", 51.91),
)

PITCH_CLASS_NAMES = tuple(name for name, _ in PITCH_CLASSES)

F_MAX = 22050.0
BAND_HALF_WIDTH = 0.5  # "1 Hz bands centered around each" harmonic


@dataclass(frozen=True)
class HarmonicSeries:
    pitch_class: str
    f0: float
    frequencies: np.ndarray  # n*f0 up to f_max


@dataclass(frozen=True)
class MelBlinder:
    pitch_class: str
    weights: np.ndarray  # (n_mels,) nonnegative
    indicator: np.ndarray  # (n_bins,) binary provenance column


def harmonic_series(f0: float, f_max: float = F_MAX, pitch_class: str = "") -> HarmonicSeries:
    """All integer multiples of f0 up to f_max (inclusive)."""
    if not 0.0 < f0 <= f_max:
        raise ValueError(f"fundamental {f0} Hz outside (0, {f_max}]")
    count = int(np.floor(f_max / f0))
    freqs = f0 * np.arange(1, count + 1, dtype=np.float64)
    return HarmonicSeries(pitch_class=pitch_class, f0=f0, frequencies=freqs)


def stft_indicator(
    series: HarmonicSeries,
    n_bins: int = 2049,
    bin_hz: float = 44100 / 4096,
    half_width: float = BAND_HALF_WIDTH,
) -> np.ndarray:
    """Binary column: 1 where the bin-center frequency lies within
    [w_n - half_width, w_n + half_width] for some harmonic w_n."""
    centers = np.arange(n_bins) * bin_hz
    # distance from each bin center to the nearest harmonic of f0
    nearest = np.clip(np.round(centers / series.f0), 1, series.frequencies.size)
    dist = np.abs(centers - nearest * series.f0)
    return (dist <= half_width).astype(np.uint8)


def build_blinder(indicator: np.ndarray, bank: MelFilterBank, pitch_class: str = "") -> MelBlinder:
    """Mel weight column = (mel filter bank) x (STFT indicator column)."""
    if indicator.shape[0] != bank.weights.shape[1]:
        raise SizeError(
            f"indicator has {indicator.shape[0]} bins, bank expects {bank.weights.shape[1]}"
        )
    weights = bank.weights @ indicator.astype(np.float64)
    return MelBlinder(pitch_class=pitch_class, weights=weights, indicator=np.asarray(indicator, dtype=np.uint8))


def build_all_blinders(
    bank: MelFilterBank,
    n_bins: int = 2049,
    bin_hz: float = 44100 / 4096,
) -> list[MelBlinder]:
    """The 12 pitch-class blinders, ordered A .. G#. Deterministic and
    data-independent; build once and share."""
    blinders = []
    for name, f0 in PITCH_CLASSES:
        series = harmonic_series(f0, pitch_class=name)
        ind = stft_indicator(series, n_bins=n_bins, bin_hz=bin_hz)
        blinders.append(build_blinder(ind, bank, pitch_class=name))
    return blinders


def apply_blinder(m: MelSpectrogram, b: MelBlinder) -> MelSpectrogram:
    """Multiply each mel row by the blinder weight, broadcast over time."""
    if m.scale != "normalized":
        raise ValueError("blinders are applied to normalized mel spectrograms")
    if m.grid.shape[0] != b.weights.shape[0]:
        raise SizeError(
            f"mel grid has {m.grid.shape[0]} bands, blinder has {b.weights.shape[0]}"
        )
    grid = m.grid * b.weights[:, None].astype(m.grid.dtype)
    return MelSpectrogram(grid=grid, scale=m.scale, bin_hz=m.bin_hz, frame_hop_s=m.frame_hop_s)


def blinded_energy(m: MelSpectrogram, b: MelBlinder) -> float:
    return float(apply_blinder(m, b).grid.sum())


def blinders_to_csv(path, blinders: list[MelBlinder]) -> None:
    """Export as (pitch_class, mel_band_index, weight) rows for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pitch_class", "mel_band_index", "weight"])
        for b in blinders:
            for j, w in enumerate(b.weights):
                writer.writerow([b.pitch_class, j, repr(float(w))])
