"""Grad-CAM heatmaps and brightness aggregates.

For the pitch-class model, each branch's post-ReLU 32x517 feature maps yield
one heatmap row: channel weights are the time-averaged gradients of the
target quadrant's pre-softmax logit, and the weighted channel sum is
ReLU-rectified. Rows stack A..G# into a 12x517 grid. Brightness sums over
the grid support ordering comparisons across the four quadrants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import QUADRANTS
from .harmonics import PITCH_CLASS_NAMES
from .model import HarmonicsModel
from .spectro import export_pgm


class UnsupportedVariantError(ValueError):
    """Pitch-class heatmaps require the harmonics model."""


@dataclass(frozen=True)
class Heatmap:
    clip_id: str
    target: int  # quadrant index 0-3
    grid: np.ndarray  # (12, n_frames), nonnegative
    pitch_classes: tuple = PITCH_CLASS_NAMES


# Pairwise brightness hypotheses, as (greater, lesser) quadrant indices:
# consonance should make Q4 brightest and Q2 dimmest.
BRIGHTNESS_HYPOTHESES = (
    ("B1>B2", 0, 1),
    ("B4>B3", 3, 2),
    ("B4>B1", 3, 0),
    ("B3>B2", 2, 1),
)


@dataclass
class BrightnessReport:
    per_clip: dict  # clip_id -> brightness of the clip's true-label heatmap
    means: np.ndarray  # (4,) mean brightness per true quadrant
    counts: np.ndarray  # (4,) clips per quadrant
    verdicts: dict  # hypothesis name -> bool

    def to_dict(self):
        return {
            "means": {q: float(self.means[i]) for i, q in enumerate(QUADRANTS)},
            "counts": {q: int(self.counts[i]) for i, q in enumerate(QUADRANTS)},
            "verdicts": self.verdicts,
            "all_hold": all(self.verdicts.values()),
        }


def grad_cam(mel_grid: np.ndarray, model: HarmonicsModel, target: int, clip_id: str = "") -> Heatmap:
    """Heatmap of the target quadrant for one normalized mel grid.

    Runs an inference-mode forward pass, backpropagates the target logit to
    the post-ReLU feature maps, averages those gradients over time per
    channel, and rectifies the weighted channel sum.
    """
    if not isinstance(model, HarmonicsModel):
        raise UnsupportedVariantError("pitch-class Grad-CAM needs the harmonics variant")
    if not 0 <= target < len(QUADRANTS):
        raise ValueError(f"target quadrant index {target} out of range")

    x = np.asarray(mel_grid)[None, :, :]
    logits = model.forward(x, train=False)
    donehot = np.zeros_like(logits)
    donehot[0, target] = 1.0
    model.backward(donehot)

    feats = model.feature_maps[0]  # (branches, C, T)
    dfeats = model.d_feature_maps[0].astype(np.float64)
    alphas = dfeats.mean(axis=2)  # (branches, C)
    grid = np.maximum(np.einsum("pc,pct->pt", alphas, feats.astype(np.float64)), 0.0)
    return Heatmap(clip_id=clip_id, target=target, grid=grid)


def clip_brightness(h: Heatmap) -> float:
    """Total brightness: sum over pitch classes and time."""
    return float(h.grid.sum())


def brightness_report(mel_grids, labels, model: HarmonicsModel, clip_ids=None) -> BrightnessReport:
    """Average heatmap brightness per true quadrant, with each clip's heatmap
    targeted at its own true label, plus the four ordering verdicts."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(mel_grids) != labels.size:
        raise ValueError("mel_grids and labels lengths differ")
    if clip_ids is None:
        clip_ids = [str(i) for i in range(labels.size)]

    per_clip = {}
    totals = np.zeros(4)
    counts = np.zeros(4, dtype=np.int64)
    for grid, label, cid in zip(mel_grids, labels, clip_ids):
        b = clip_brightness(grad_cam(grid, model, int(label), clip_id=cid))
        per_clip[cid] = b
        totals[label] += b
        counts[label] += 1
    if np.any(counts == 0):
        missing = [QUADRANTS[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"no clips with true label(s) {missing}")

    means = totals / counts
    verdicts = {name: bool(means[hi] > means[lo]) for name, hi, lo in BRIGHTNESS_HYPOTHESES}
    return BrightnessReport(per_clip=per_clip, means=means, counts=counts, verdicts=verdicts)


def render_heatmap(path, h: Heatmap, upscale: int = 8) -> None:
    """Min-max scaled grayscale PGM, rows = pitch classes A..G#, columns = time."""
    export_pgm(path, h.grid, upscale=upscale)


def benchmark_cam(mel_grid: np.ndarray, model, target: int) -> np.ndarray:
    """Spatial heatmap from a benchmark model's last conv feature maps.

    Provided for visual contrast with the pitch-class heatmaps; no ordering
    hypotheses attach to it.
    """
    from .model import BenchmarkModel

    if not isinstance(model, BenchmarkModel):
        raise UnsupportedVariantError("benchmark_cam needs a BenchmarkModel")
    x = np.asarray(mel_grid)[None, :, :]
    logits = model.forward(x, train=False)

    # capture gradients at the last ReLU of the first branch via a probe
    feats = model.feature_maps[0]
    grads = {}
    branch = model.branches[0]
    relu_idx = max(i for i, l in enumerate(branch) if l.__class__.__name__ == "ReLU")
    tail = branch[relu_idx + 1 :]

    donehot = np.zeros_like(logits)
    donehot[0, target] = 1.0
    d = donehot
    for layer in reversed(model.head):
        d = layer.backward(d)
    if len(model.branches) > 1:
        d = d[:, : model._widths[0]]
    for layer in reversed(tail):
        d = layer.backward(d)

    a = feats[0].astype(np.float64)  # (C, H, W)
    alpha = d[0].astype(np.float64).reshape(a.shape).mean(axis=(1, 2))
    return np.maximum(np.tensordot(alpha, a, axes=(0, 0)), 0.0)
