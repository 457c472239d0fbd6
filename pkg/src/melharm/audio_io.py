"""WAV decoding, band-limited resampling, clip segmentation, and tone synthesis.

Everything downstream of this module assumes mono audio at 44100 Hz.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CANONICAL_RATE = 44100
NYQUIST = CANONICAL_RATE // 2


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE container."""


class UnsupportedEncodingError(ValueError):
    """WAV codec other than PCM16 / IEEE float32, or channel count > 2."""


@dataclass(frozen=True)
class Waveform:
    """Mono sample sequence with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def decode_wav(data: bytes) -> Waveform:
    """Decode a RIFF/WAVE byte string (PCM16 or IEEE float32, 1-2 channels).

    Stereo is mixed down by per-sample arithmetic mean; PCM16 samples are
    scaled by 1/32768 so the full negative range maps to -1.0.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE container")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        pos += 8
        body = data[pos : pos + size]
        if len(body) < size and cid in (b"fmt ", b"data"):
            raise WavFormatError(f"truncated {cid.decode(errors='replace')} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            raw = body
        pos += size + (size & 1)  # chunks are word-aligned

    if fmt is None or raw is None:
        raise WavFormatError("missing fmt or data chunk")

    audio_format, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"unsupported channel count {channels}")
    if audio_format == 1 and bits == 16:
        x = np.frombuffer(raw[: len(raw) - len(raw) % 2], dtype="<i2").astype(np.float64)
        x /= 32768.0
    elif audio_format == 3 and bits == 32:
        x = np.frombuffer(raw[: len(raw) - len(raw) % 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncodingError(
            f"unsupported encoding: format tag {audio_format}, {bits}-bit"
        )

    if channels == 2:
        x = x[: x.size - x.size % 2].reshape(-1, 2).mean(axis=1)
    return Waveform(np.clip(x, -1.0, 1.0), rate)


def encode_wav(w: Waveform) -> bytes:
    """Encode as 16-bit PCM WAV. Round-trips decode_wav output sample-exactly."""
    ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    raw = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(raw), b"WAVE",
        b"fmt ", 16, 1, 1, w.sample_rate_hz, w.sample_rate_hz * 2, 2, 16,
        b"data", len(raw),
    )
    return header + raw


def write_wav(path, w: Waveform) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(w))


def read_wav(path) -> Waveform:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


# Windowed-sinc resampler: Kaiser window, 16 taps per side. Chosen over
# linear interpolation because harmonic-alignment tests need clean spectra.
_KAISER_BETA = 8.0
_HALF_TAPS = 16


def resample(w: Waveform, target_hz: int) -> Waveform:
    """Band-limited resampling to target_hz.

    Output length is round(len * target_hz / source_hz). Identity when the
    rates already match (bit-identical samples).
    """
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == w.sample_rate_hz:
        return Waveform(w.samples.copy(), target_hz)

    src = w.samples
    ratio = target_hz / w.sample_rate_hz
    n_out = int(round(src.size * ratio))
    cutoff = min(1.0, ratio)  # anti-alias when downsampling

    # fractional source position of each output sample
    t = np.arange(n_out) / ratio
    n0 = np.floor(t).astype(np.int64)
    k = np.arange(-_HALF_TAPS + 1, _HALF_TAPS + 1)
    idx = n0[:, None] + k[None, :]
    frac = t[:, None] - idx

    taps = cutoff * np.sinc(cutoff * frac)
    win_arg = frac / _HALF_TAPS
    win = np.where(
        np.abs(win_arg) <= 1.0,
        np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - win_arg**2))) / np.i0(_KAISER_BETA),
        0.0,
    )
    taps *= win
    taps /= taps.sum(axis=1, keepdims=True)  # unity DC gain

    padded = np.concatenate(
        [np.zeros(_HALF_TAPS), src, np.zeros(_HALF_TAPS + 1)]
    )
    out = np.einsum("ij,ij->i", taps, padded[idx + _HALF_TAPS])
    return Waveform(np.clip(out, -1.0, 1.0), target_hz)


def segment_clips(w: Waveform, clip_seconds: float) -> list[Waveform]:
    """Cut into consecutive non-overlapping clips of exactly clip_seconds.

    The trailing remainder shorter than a full clip is discarded. Requires
    the canonical 44100 Hz rate.
    """
    if w.sample_rate_hz != CANONICAL_RATE:
        raise ValueError(f"segment_clips requires {CANONICAL_RATE} Hz input")
    if clip_seconds <= 0:
        raise ValueError("clip_seconds must be positive")
    n = int(round(clip_seconds * CANONICAL_RATE))
    count = w.samples.size // n
    return [Waveform(w.samples[i * n : (i + 1) * n], CANONICAL_RATE) for i in range(count)]


def synth_tone_stack(
    fundamentals,
    partial_counts,
    amplitudes,
    duration_s: float,
    seed: int,
    noise_level: float = 0.0,
    sample_rate_hz: int = CANONICAL_RATE,
) -> Waveform:
    """Sum of harmonic tones: each fundamental contributes sine partials at
    integer multiples with 1/n amplitude rolloff. Peak-normalized to 0.9.

    Partial phases (and optional low-level noise) are drawn from `seed`.
    """
    fundamentals = np.asarray(fundamentals, dtype=np.float64)
    partial_counts = np.asarray(partial_counts, dtype=np.int64)
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    if not (fundamentals.size == partial_counts.size == amplitudes.size):
        raise ValueError("fundamentals, partial_counts, amplitudes must match in length")
    if np.any(fundamentals <= 0) or np.any(partial_counts < 1):
        raise ValueError("fundamentals and partial counts must be positive")
    top = fundamentals * partial_counts
    if np.any(top >= NYQUIST):
        raise ValueError(
            f"highest partial {top.max():.1f} Hz reaches Nyquist ({NYQUIST} Hz)"
        )

    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration_s * sample_rate_hz))) / sample_rate_hz
    x = np.zeros_like(t)
    for f0, count, amp in zip(fundamentals, partial_counts, amplitudes):
        n = np.arange(1, count + 1)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
        x += amp * np.sum(
            np.sin(2.0 * np.pi * np.outer(n * f0, t) + phases[:, None]) / n[:, None],
            axis=0,
        )
    if noise_level > 0.0:
        x += noise_level * rng.standard_normal(t.size)

    peak = np.max(np.abs(x))
    if peak > 0:
        x *= 0.9 / peak
    return Waveform(x, sample_rate_hz)
