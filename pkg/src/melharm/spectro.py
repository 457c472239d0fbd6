"""STFT power spectrograms and mel spectrograms.

Canonical parameterization: Hann window of 4096 samples, hop 512, 44100 Hz,
256 mel bands. A 6-second clip yields a 2049 x 517 power grid and a
256 x 517 mel grid; the clip tail is zero-padded so that exactly
ceil(len / hop) frames exist.

The FFT is an in-repo radix-2 iterative transform, vectorized over frames;
accumulation is in 64-bit and grids are stored in 32-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio_io import Waveform


class SizeError(ValueError):
    """Input dimensions violate an operation's shape contract."""


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 4096
    hop: int = 512
    sample_rate: int = 44100

    def __post_init__(self):
        n = self.window_size
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError("window_size must be a power of two >= 2")
        if not (0 < self.hop <= n):
            raise ValueError("hop must satisfy 0 < hop <= window_size")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.window_size

    @property
    def frame_hop_s(self) -> float:
        return self.hop / self.sample_rate


@dataclass(frozen=True)
class PowerSpectrogram:
    grid: np.ndarray  # (n_bins, n_frames) float32, nonnegative
    bin_hz: float
    frame_hop_s: float


@dataclass(frozen=True)
class MelFilterBank:
    weights: np.ndarray  # (n_mels, n_bins), triangle weights in [0, 1]
    band_edges: np.ndarray  # (n_mels + 2,) Hz


@dataclass(frozen=True)
class MelSpectrogram:
    grid: np.ndarray  # (n_mels, n_frames)
    scale: str = "power"  # power | decibel | normalized
    bin_hz: float = 44100 / 4096
    frame_hop_s: float = 512 / 44100


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window w(i) = 0.5 - 0.5*cos(2*pi*i/n)."""
    if n < 2:
        raise ValueError("window length must be >= 2")
    i = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * i / n)


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 FFT over the last axis (length must be a power of 2).

    Decimation in time with precomputed half-circle twiddles; works on any
    leading batch shape.
    """
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError("FFT length must be a power of two")
    out = np.asarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)].copy()
    twiddle = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    size = 2
    while size <= n:
        half = size // 2
        w = twiddle[:: n // size]
        blocks = out.reshape(*out.shape[:-1], n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * w
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return out


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    return -(-n_samples // cfg.hop)  # ceil


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> PowerSpectrogram:
    """Power spectrogram |X(m,k)|^2 with frames starting at multiples of hop.

    Frame m covers samples [m*hop, m*hop + window); the tail is zero-padded so
    a 6 s clip at the canonical config yields exactly 517 frames.
    """
    if w.sample_rate_hz != cfg.sample_rate:
        raise ValueError("waveform rate does not match StftConfig.sample_rate")
    x = w.samples
    n, hop = cfg.window_size, cfg.hop
    if x.size < n:
        raise SizeError(f"need at least {n} samples, got {x.size}")

    m = frame_count(x.size, cfg)
    padded = np.zeros((m - 1) * hop + n)
    padded[: x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, n)[::hop]
    spectra = fft_radix2(frames * hann_window(n))
    power = (spectra.real**2 + spectra.imag**2)[:, : cfg.n_bins]
    return PowerSpectrogram(
        grid=power.T.astype(np.float32),
        bin_hz=cfg.bin_hz,
        frame_hop_s=cfg.frame_hop_s,
    )


def hz_to_mel(f):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    n_mels: int = 256,
    f_min: float = 0.0,
    f_max: float = 22050.0,
    n_bins: int = 2049,
    bin_hz: float = 44100 / 4096,
) -> MelFilterBank:
    """Triangular mel filter bank evaluated at STFT bin centers.

    Band edges are equally spaced on the mel scale; row j is the unit-peak
    triangle over [edge_j, edge_{j+2}] peaking at edge_{j+1}, so each
    frequency contributes to at most two bands.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_bins) * bin_hz

    lower = edges[:-2, None]
    center = edges[1:-1, None]
    upper = edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    weights = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return MelFilterBank(weights=weights, band_edges=edges)


def mel_spectrogram(s: PowerSpectrogram, bank: MelFilterBank) -> MelSpectrogram:
    """Project a power spectrogram through the mel filter bank (matrix product)."""
    if s.grid.shape[0] != bank.weights.shape[1]:
        raise SizeError(
            f"spectrogram has {s.grid.shape[0]} bins, bank expects {bank.weights.shape[1]}"
        )
    grid = bank.weights @ s.grid.astype(np.float64)
    return MelSpectrogram(
        grid=grid.astype(np.float32),
        scale="power",
        bin_hz=s.bin_hz,
        frame_hop_s=s.frame_hop_s,
    )


DB_FLOOR = 1e-10


def to_decibel_normalized(m: MelSpectrogram) -> MelSpectrogram:
    """Convert power to dB (10*log10, floored at 1e-10) then min-max
    normalize the clip to [0, 1]. A constant grid maps to all-zeros."""
    if m.scale != "power":
        raise ValueError(f"expected power-scale input, got {m.scale!r}")
    db = 10.0 * np.log10(np.maximum(m.grid.astype(np.float64), DB_FLOOR))
    lo, hi = db.min(), db.max()
    if hi > lo:
        norm = (db - lo) / (hi - lo)
    else:
        norm = np.zeros_like(db)
    return MelSpectrogram(
        grid=norm.astype(np.float32),
        scale="normalized",
        bin_hz=m.bin_hz,
        frame_hop_s=m.frame_hop_s,
    )


# --- serialization: JSON sidecar + little-endian float32 raw grid ---------

def save_grid(path_base, grid: np.ndarray, scale: str, bin_hz: float, frame_hop_s: float):
    """Write <base>.json metadata and <base>.f32 row-major raw grid."""
    meta = {
        "rows": int(grid.shape[0]),
        "cols": int(grid.shape[1]),
        "scale": scale,
        "bin_hz": bin_hz,
        "frame_hop_s": frame_hop_s,
    }
    with open(f"{path_base}.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    np.ascontiguousarray(grid, dtype="<f4").tofile(f"{path_base}.f32")


def load_grid(path_base):
    with open(f"{path_base}.json") as fh:
        meta = json.load(fh)
    grid = np.fromfile(f"{path_base}.f32", dtype="<f4").reshape(meta["rows"], meta["cols"])
    return grid, meta


def export_pgm(path, grid: np.ndarray, upscale: int = 1):
    """8-bit binary PGM render, min-max scaled; rows keep their order."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    img = np.zeros_like(g) if hi <= lo else (g - lo) / (hi - lo)
    img = np.round(img * 255).astype(np.uint8)
    if upscale > 1:
        img = np.repeat(np.repeat(img, upscale, axis=0), upscale, axis=1)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes())
