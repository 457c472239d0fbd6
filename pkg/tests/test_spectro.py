import json

import numpy as np
import pytest

from melharm import spectro
from melharm.audio_io import Waveform, synth_tone_stack
from melharm.spectro import (
    MelSpectrogram,
    SizeError,
    StftConfig,
    build_mel_filterbank,
    export_pgm,
    fft_radix2,
    frame_count,
    hann_window,
    hz_to_mel,
    load_grid,
    mel_spectrogram,
    mel_to_hz,
    save_grid,
    stft,
    to_decibel_normalized,
)


def naive_dft(x):
    n = x.size
    k = np.arange(n)
    return (np.exp(-2j * np.pi * np.outer(k, k) / n) @ x.astype(np.complex128))


def test_hann_window_periodic():
    w = hann_window(8)
    assert w[0] == 0.0
    assert w[4] == pytest.approx(1.0)
    # periodic form: w[n] == w[N-n] except the missing final 0
    np.testing.assert_allclose(w[1:], w[1:][::-1])
    with pytest.raises(ValueError):
        hann_window(1)


def test_fft_matches_naive_dft():
    rng = np.random.default_rng(0)
    for n in (2, 8, 64, 256):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        np.testing.assert_allclose(fft_radix2(x), naive_dft(x), atol=1e-9 * n)


def test_fft_batched_equals_per_row():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 5, 32))
    batched = fft_radix2(x)
    for i in range(3):
        for j in range(5):
            np.testing.assert_allclose(batched[i, j], fft_radix2(x[i, j]))


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft_radix2(np.zeros(12))


def test_stft_config_validation():
    with pytest.raises(ValueError):
        StftConfig(window_size=1000)
    with pytest.raises(ValueError):
        StftConfig(hop=0)
    cfg = StftConfig()
    assert cfg.n_bins == 2049
    assert cfg.bin_hz == pytest.approx(44100 / 4096)


def test_frame_count_is_ceiling():
    cfg = StftConfig()
    assert frame_count(6 * 44100, cfg) == 517
    assert frame_count(512, cfg) == 1
    assert frame_count(513, cfg) == 2


def test_stft_shape_and_tail_padding(stft_cfg):
    w = Waveform(np.random.default_rng(2).uniform(-0.5, 0.5, 6 * 44100), 44100)
    s = stft(w, stft_cfg)
    assert s.grid.shape == (2049, 517)
    assert s.grid.dtype == np.float32
    assert np.all(s.grid >= 0)


def test_stft_rejects_wrong_rate_and_short_input(stft_cfg):
    with pytest.raises(ValueError):
        stft(Waveform(np.zeros(44100), 22050), stft_cfg)
    with pytest.raises(SizeError):
        stft(Waveform(np.zeros(1000), 44100), stft_cfg)


def test_sine_peaks_at_expected_bin(stft_cfg):
    t = np.arange(44100) / 44100
    w = Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t), 44100)
    s = stft(w, stft_cfg)
    assert int(np.argmax(s.grid[:, 10])) == round(440.0 / stft_cfg.bin_hz) == 41


def test_mel_scale_round_trip():
    f = np.array([0.0, 440.0, 1000.0, 22050.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, rtol=1e-12)
    assert hz_to_mel(1000.0) == pytest.approx(2595.0 * np.log10(1 + 1000 / 700))


def test_filterbank_geometry(bank):
    assert bank.weights.shape == (256, 2049)
    assert bank.band_edges.shape == (258,)
    assert np.all(bank.weights >= 0) and np.all(bank.weights <= 1)
    # edges equally spaced on the mel scale
    mels = hz_to_mel(bank.band_edges)
    np.testing.assert_allclose(np.diff(mels), mels[1] - mels[0], rtol=1e-9)
    # adjacent triangles sum to 1 between the first and last centers
    freqs = np.arange(2049) * (44100 / 4096)
    interior = (freqs > bank.band_edges[1]) & (freqs < bank.band_edges[-2])
    np.testing.assert_allclose(bank.weights.sum(axis=0)[interior], 1.0, atol=1e-9)


def test_filterbank_unit_peak_triangles(bank):
    # unit-peak triangles, sampled at bin centers (so slightly below 1)
    assert 0.99 < bank.weights.max() <= 1.0
    with pytest.raises(ValueError):
        build_mel_filterbank(n_mels=0)


def test_mel_spectrogram_shapes(bank, stft_cfg):
    w = synth_tone_stack([440.0], [4], [1.0], 6.0, seed=0)
    m = mel_spectrogram(stft(w, stft_cfg), bank)
    assert m.grid.shape == (256, 517)
    assert m.scale == "power"
    with pytest.raises(SizeError):
        mel_spectrogram(
            spectro.PowerSpectrogram(np.zeros((10, 5), np.float32), 1.0, 1.0), bank
        )


def test_decibel_normalization_range(bank, stft_cfg):
    w = synth_tone_stack([440.0], [4], [1.0], 1.0, seed=0)
    m = to_decibel_normalized(mel_spectrogram(stft(w, stft_cfg), bank))
    assert m.scale == "normalized"
    assert m.grid.min() == 0.0
    assert m.grid.max() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        to_decibel_normalized(m)  # already normalized


def test_constant_grid_normalizes_to_zeros():
    m = MelSpectrogram(grid=np.full((4, 3), 2.0, np.float32), scale="power")
    out = to_decibel_normalized(m)
    np.testing.assert_array_equal(out.grid, 0.0)


def test_grid_serialization_round_trip(tmp_path):
    grid = np.random.default_rng(3).random((5, 7)).astype(np.float32)
    base = tmp_path / "grid"
    save_grid(base, grid, "normalized", 10.766, 0.0116)
    back, meta = load_grid(base)
    np.testing.assert_array_equal(back, grid)
    assert meta["scale"] == "normalized"
    assert meta["rows"] == 5 and meta["cols"] == 7
    assert json.load(open(f"{base}.json"))["bin_hz"] == pytest.approx(10.766)


def test_pgm_export(tmp_path):
    path = tmp_path / "img.pgm"
    export_pgm(path, np.arange(6.0).reshape(2, 3), upscale=2)
    data = path.read_bytes()
    assert data.startswith(b"P5\n6 4\n255\n")
    assert len(data) == len(b"P5\n6 4\n255\n") + 24
