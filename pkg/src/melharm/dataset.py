"""Annotated clip ingestion and synthetic fixture generation.

A single manifest CSV schema covers dimensional (DEAM-style, midpoint (0,0)),
discrete+dimensional (Soundtracks-style, midpoint (4,4)), and direct-quadrant
rows. Quadrant indices are 0-based internally (0 = Q1 .. 3 = Q4).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import QUADRANTS
from .audio_io import (
    CANONICAL_RATE,
    Waveform,
    read_wav,
    resample,
    segment_clips,
    synth_tone_stack,
    write_wav,
)
from .harmonics import PITCH_CLASSES
from .spectro import StftConfig, build_mel_filterbank, mel_spectrogram, stft, to_decibel_normalized

MANIFEST_COLUMNS = [
    "song_id", "audio_path", "start_s", "scale",
    "valence", "arousal", "discrete_emotion", "quadrant",
]

DISCRETE_TO_QUADRANT = {"happy": 0, "fear": 1, "anger": 1, "sad": 2, "tender": 3}

SCALE_MIDPOINTS = {"soundtracks": (4.0, 4.0), "deam": (0.0, 0.0)}

CLIP_SECONDS = 6.0


class UnmappedEmotionError(ValueError):
    """Discrete emotion with no quadrant mapping (e.g., surprise)."""


class ManifestError(ValueError):
    """Manifest could not be loaded; carries itemized row errors."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("manifest load failed:\n" + "\n".join(self.errors))


@dataclass(frozen=True)
class ClipRecord:
    song_id: str
    audio_path: str
    start_s: float
    clip_seconds: float
    quadrant: int  # 0-based index
    scale: str

    @property
    def quadrant_name(self) -> str:
        return QUADRANTS[self.quadrant]


@dataclass(frozen=True)
class ClipSet:
    records: tuple
    provenance: str = ""

    def __len__(self):
        return len(self.records)

    def quadrant_counts(self) -> np.ndarray:
        counts = np.zeros(4, dtype=np.int64)
        for rec in self.records:
            counts[rec.quadrant] += 1
        return counts


def map_quadrant_dimensional(valence: float, arousal: float, midpoint=(0.0, 0.0)) -> int:
    """Quadrant from a valence-arousal point; values at the midpoint go to
    the nonnegative side (so the midpoint itself is Q1)."""
    mv, ma = midpoint
    if valence >= mv:
        return 0 if arousal >= ma else 3
    return 1 if arousal >= ma else 2


def map_quadrant_discrete(emotion: str) -> int:
    """happy -> Q1, fear/anger -> Q2, sad -> Q3, tender -> Q4."""
    key = emotion.strip().lower()
    if key not in DISCRETE_TO_QUADRANT:
        raise UnmappedEmotionError(
            f"no quadrant mapping for emotion {emotion!r}; use dimensional labels"
        )
    return DISCRETE_TO_QUADRANT[key]


def window_average_labels(samples, start_s: float, end_s: float, step_s: float = 0.5):
    """Mean valence/arousal of the per-step annotation samples whose
    timestamps fall inside [start_s, end_s)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError("samples must be an (n, 2) valence/arousal sequence")
    times = np.arange(samples.shape[0]) * step_s
    mask = (times >= start_s) & (times < end_s)
    if not mask.any():
        raise ValueError(f"no annotation samples inside [{start_s}, {end_s})")
    v, a = samples[mask].mean(axis=0)
    return float(v), float(a)


def _resolve_row(row, line_no):
    scale = row.get("scale", "").strip().lower()
    if scale == "quadrant":
        q = row.get("quadrant", "").strip().upper()
        if q not in QUADRANTS:
            raise ValueError(f"line {line_no}: bad quadrant {q!r}")
        return QUADRANTS.index(q), scale
    if scale in SCALE_MIDPOINTS:
        emotion = row.get("discrete_emotion", "").strip()
        if emotion:
            return map_quadrant_discrete(emotion), scale
        try:
            v = float(row["valence"])
            a = float(row["arousal"])
        except (KeyError, ValueError):
            raise ValueError(f"line {line_no}: valence/arousal not parseable")
        return map_quadrant_dimensional(v, a, SCALE_MIDPOINTS[scale]), scale
    raise ValueError(f"line {line_no}: unknown scale {scale!r}")


def load_manifest(path) -> ClipSet:
    """Load a manifest CSV into a ClipSet. Any row error rejects the whole
    load and reports every offending row."""
    records = []
    errors = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError([f"missing columns: {', '.join(missing)}"])
        for line_no, row in enumerate(reader, start=2):
            try:
                quadrant, scale = _resolve_row(row, line_no)
                audio_path = row["audio_path"].strip()
                if audio_path and not os.path.isabs(audio_path):
                    audio_path = os.path.join(base, audio_path)
                if audio_path and not os.path.exists(audio_path):
                    raise ValueError(f"line {line_no}: missing audio file {audio_path}")
                records.append(
                    ClipRecord(
                        song_id=row["song_id"].strip(),
                        audio_path=audio_path,
                        start_s=float(row["start_s"] or 0.0),
                        clip_seconds=CLIP_SECONDS,
                        quadrant=quadrant,
                        scale=scale,
                    )
                )
            except ValueError as exc:
                errors.append(str(exc))
    if errors:
        raise ManifestError(errors)
    return ClipSet(records=tuple(records), provenance=os.path.basename(path))


def save_manifest(path, clipset: ClipSet, quadrant_only: bool = True):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for rec in clipset.records:
            writer.writerow([
                rec.song_id, os.path.relpath(rec.audio_path, os.path.dirname(os.path.abspath(path))),
                rec.start_s, "quadrant", "", "", "", rec.quadrant_name,
            ])


def clip_waveform(rec: ClipRecord) -> Waveform:
    """Decode the record's audio, resample to 44100 Hz, and cut out the clip."""
    w = read_wav(rec.audio_path)
    if w.sample_rate_hz != CANONICAL_RATE:
        w = resample(w, CANONICAL_RATE)
    start = int(round(rec.start_s * CANONICAL_RATE))
    n = int(round(rec.clip_seconds * CANONICAL_RATE))
    if start + n > len(w):
        raise ValueError(f"clip at {rec.start_s}s overruns {rec.audio_path}")
    return Waveform(w.samples[start : start + n], CANONICAL_RATE)


_FEATURE_BANK = None


def normalized_mel(w: Waveform, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Waveform -> normalized 256 x T mel grid (the CNN input)."""
    global _FEATURE_BANK
    if _FEATURE_BANK is None:
        _FEATURE_BANK = build_mel_filterbank()
    return to_decibel_normalized(mel_spectrogram(stft(w, cfg), _FEATURE_BANK)).grid


def features_for_clipset(clipset: ClipSet):
    """Extract (X, y) arrays: X (n, 256, 517) float32 mel grids, y labels."""
    grids = [normalized_mel(clip_waveform(rec)) for rec in clipset.records]
    y = np.array([rec.quadrant for rec in clipset.records], dtype=np.int64)
    return np.stack(grids).astype(np.float32), y


# --- pitch-class discrimination fixture --------------------------------------

def aligned_harmonic_fixture(
    f0: float,
    seed: int = 5,
    duration_s: float = CLIP_SECONDS,
    amplitude: float = 1e-6,
    max_components: int = 12,
    f_low: float = 100.0,
    f_high: float = 4000.0,
    cfg: StftConfig = StftConfig(),
) -> Waveform:
    """A harmonic stack on f0 whose partials sit exactly on the STFT bins the
    pitch class's blinder selects.

    Components are single sinusoids at bin-aligned multiples of f0 between
    f_low and f_high (at most max_components, spread evenly). The tiny
    amplitude pushes spectral leakage below the decibel floor, so after
    per-clip normalization the grid is dark everywhere except the stack's
    own peaks and blinded energy compares peak placement rather than blinder
    mass.
    """
    from .harmonics import harmonic_series, stft_indicator

    indicator = stft_indicator(harmonic_series(f0), n_bins=cfg.n_bins, bin_hz=cfg.bin_hz)
    bins = np.flatnonzero(indicator)
    freqs = bins * cfg.bin_hz
    bins = bins[(freqs > f_low) & (freqs < f_high)]
    if bins.size == 0:
        raise ValueError(f"no bin-aligned harmonics of {f0} Hz in ({f_low}, {f_high})")
    if bins.size > max_components:
        keep = np.linspace(0, bins.size - 1, max_components).round().astype(int)
        bins = bins[keep]
    fundamentals = [round(k * cfg.bin_hz / f0) * f0 for k in bins]
    w = synth_tone_stack(
        fundamentals, [1] * len(fundamentals), [1.0] * len(fundamentals),
        duration_s, seed=seed,
    )
    return Waveform(w.samples * amplitude, cfg.sample_rate)


# --- synthetic 4-quadrant fixture set ---------------------------------------

# Valence axis: consonant stacks (simple frequency ratios, harmonics shared
# across the pitch-class grid) vs dissonant quarter-tone clusters (components
# that fall between every pitch class, so their harmonics miss the grid).
# Arousal axis: partial count; the calm quadrants carry the richer sustained
# spectra, the tense ones the sparser attacks, so the two axes stay
# independently recoverable from the mel grid (high arousal <= 8 partials,
# low arousal >= 16). Within each arousal band the consonant quadrant gets
# the slightly richer spectrum, giving the per-quadrant richness ordering
# Q4 > Q3 > Q1 > Q2.
CONSONANT_RATIOS = (1.0, 1.5, 2.0)
DISSONANT_RATIOS = (1.0, 2 ** (1 / 24), 2 ** (11 / 24))
QUADRANT_PARTIALS = (8, 4, 16, 24)  # Q1..Q4


def _quadrant_clip(quadrant: int, root_hz: float, seed: int) -> Waveform:
    consonant = quadrant in (0, 3)  # Q1, Q4
    ratios = CONSONANT_RATIOS if consonant else DISSONANT_RATIOS
    partials = QUADRANT_PARTIALS[quadrant]
    fundamentals = [root_hz * r for r in ratios]
    counts = [max(1, min(partials, int(21000.0 / f))) for f in fundamentals]
    amps = [1.0, 0.8, 0.6]
    return synth_tone_stack(
        fundamentals, counts, amps, CLIP_SECONDS, seed=seed, noise_level=0.003
    )


def synth_dataset(n_per_quadrant: int, seed: int, out_dir) -> ClipSet:
    """Generate a balanced labeled WAV set plus manifest.csv in out_dir.

    Roots are drawn from pitch-class fundamentals a few octaves up, so the
    consonant/dissonant structure lines up with the blinder grid. Each WAV is
    one 6-second clip and its own "song".
    """
    if n_per_quadrant < 1:
        raise ValueError("n_per_quadrant must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    fundamentals = [f0 for _, f0 in PITCH_CLASSES]

    records = []
    for quadrant in range(4):
        for i in range(n_per_quadrant):
            pc = int(rng.integers(0, 12))
            octave = int(rng.integers(3, 5))  # roots roughly 220-880 Hz
            root = fundamentals[pc] * (2**octave)
            clip_seed = int(rng.integers(0, 2**31))
            w = _quadrant_clip(quadrant, root, clip_seed)
            name = f"synth_q{quadrant + 1}_{i:03d}.wav"
            path = os.path.join(out_dir, name)
            write_wav(path, w)
            records.append(
                ClipRecord(
                    song_id=f"q{quadrant + 1}_{i:03d}",
                    audio_path=path,
                    start_s=0.0,
                    clip_seconds=CLIP_SECONDS,
                    quadrant=quadrant,
                    scale="quadrant",
                )
            )
    clipset = ClipSet(records=tuple(records), provenance=f"synthetic(seed={seed})")
    save_manifest(os.path.join(out_dir, "manifest.csv"), clipset)
    return clipset
