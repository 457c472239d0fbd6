import csv

import numpy as np
import pytest

from melharm import harmonics, spectro
from melharm.audio_io import Waveform, synth_tone_stack
from melharm.harmonics import (
    PITCH_CLASSES,
    PITCH_CLASS_NAMES,
    apply_blinder,
    blinded_energy,
    blinders_to_csv,
    build_blinder,
    harmonic_series,
    stft_indicator,
)


def test_pitch_class_table():
    assert PITCH_CLASS_NAMES == ("A", "A#", "B", "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#")
    table = dict(PITCH_CLASSES)
    assert table["A"] == 27.50
    assert table["C"] == 32.70
    assert table["G#"] == 51.91
    # equal temperament: each step multiplies by ~2^(1/12)
    f0s = [f for _, f in PITCH_CLASSES]
    ratios = np.diff(np.log2(f0s))
    np.testing.assert_allclose(ratios, 1 / 12, atol=3e-4)  # table rounded to 0.01 Hz


def test_harmonic_series_counts():
    assert harmonic_series(27.50).frequencies.size == 801
    assert harmonic_series(51.91).frequencies.size == 424
    series = harmonic_series(27.50)
    assert series.frequencies[0] == 27.50
    assert series.frequencies[-1] <= 22050.0
    np.testing.assert_allclose(np.diff(series.frequencies), 27.50)
    with pytest.raises(ValueError):
        harmonic_series(0.0)
    with pytest.raises(ValueError):
        harmonic_series(30000.0)


def test_indicator_is_sparse_binary():
    for name, f0 in PITCH_CLASSES:
        ind = stft_indicator(harmonic_series(f0))
        assert ind.shape == (2049,)
        assert set(np.unique(ind)) <= {0, 1}
        density = ind.mean()
        assert 0.0 < density <= 0.15, f"{name}: density {density}"


def test_indicator_marks_only_near_harmonics():
    ind = stft_indicator(harmonic_series(27.50))
    assert ind.sum() == 73
    bin_hz = 44100 / 4096
    for k in np.flatnonzero(ind):
        center = k * bin_hz
        nearest = round(center / 27.50) * 27.50
        assert abs(center - nearest) <= 0.5
    # a bin far from every harmonic stays off
    k_off = int(round((27.50 * 10 + 13.75) / bin_hz))
    assert ind[k_off] == 0


def test_blinder_is_bank_times_indicator(bank, blinders):
    for b in blinders:
        series = harmonic_series(dict(PITCH_CLASSES)[b.pitch_class])
        ind = stft_indicator(series)
        np.testing.assert_allclose(b.weights, bank.weights @ ind.astype(np.float64))
        assert np.all(b.weights >= 0)
        assert b.weights.shape == (256,)
    assert [b.pitch_class for b in blinders] == list(PITCH_CLASS_NAMES)


def test_blinder_shape_guard(bank):
    with pytest.raises(spectro.SizeError):
        build_blinder(np.zeros(100, dtype=np.uint8), bank)


def test_apply_blinder_requires_normalized_scale(blinders):
    power = spectro.MelSpectrogram(grid=np.ones((256, 4), np.float32), scale="power")
    with pytest.raises(ValueError):
        apply_blinder(power, blinders[0])
    short = spectro.MelSpectrogram(grid=np.ones((10, 4), np.float32), scale="normalized")
    with pytest.raises(spectro.SizeError):
        apply_blinder(short, blinders[0])


def test_apply_blinder_broadcasts_over_time(blinders):
    grid = np.ones((256, 3), dtype=np.float32)
    m = spectro.MelSpectrogram(grid=grid, scale="normalized")
    out = apply_blinder(m, blinders[0])
    np.testing.assert_allclose(out.grid[:, 0], blinders[0].weights.astype(np.float32))
    np.testing.assert_allclose(out.grid[:, 1], out.grid[:, 0])
    assert blinded_energy(m, blinders[0]) == pytest.approx(3 * blinders[0].weights.sum(), rel=1e-5)


def test_octave_stack_prefers_matching_blinder(bank, blinders, stft_cfg):
    # 440 + 880 Hz (pitch class A) keeps more energy under A than under D#
    w = synth_tone_stack([440.0, 880.0], [1, 1], [1.0, 1.0], 6.0, seed=1)
    m = spectro.to_decibel_normalized(
        spectro.mel_spectrogram(spectro.stft(w, stft_cfg), bank)
    )
    e_a = blinded_energy(m, blinders[0])
    e_dsharp = blinded_energy(m, blinders[6])
    assert e_a > e_dsharp


def test_blinders_to_csv(tmp_path, blinders):
    path = tmp_path / "blinders.csv"
    blinders_to_csv(path, blinders)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12 * 256
    assert rows[0]["pitch_class"] == "A"
    assert float(rows[0]["weight"]) == pytest.approx(blinders[0].weights[0])
