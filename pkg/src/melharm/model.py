"""CNN assembly, training, evaluation, fold orchestration, checkpointing.

The main model runs 12 pitch-class branches over a blinded mel spectrogram
(full-height 256x1 convolution, 32 channels each), max-pools across the
branches, and maps the pooled features to four valence-arousal quadrant
logits. Benchmark variants with conventional filter geometries are provided
for comparison at reduced depth.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import QUADRANTS
from .nn_core import (
    Adam,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    MaxPool2d,
    ReLU,
    softmax,
    softmax_cross_entropy,
)

VARIANTS = ("harmonics", "square", "tall_rect", "wide_rect", "time", "frequency", "time_frequency")


@dataclass(frozen=True)
class ArchitectureSpec:
    variant: str = "harmonics"
    channels: int = 32
    dropout_rate: float = 0.25
    n_mels: int = 256
    n_frames: int = 517
    # benchmark knobs (reduced-depth stacks)
    block_channels: tuple = (32, 64, 128, 128)
    onelayer_channels: int = 256
    onelayer_length: int = 128
    hidden: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    fold_count: int = 10
    balance_cap: float = 1.5

    def __post_init__(self):
        if self.fold_count < 2:
            raise ValueError("fold_count must be >= 2")
        if self.balance_cap <= 1:
            raise ValueError("balance_cap must be > 1")


class HarmonicsModel:
    """12 blinded branches -> conv(256x1x32) -> BN -> ReLU -> avg pool over
    time -> dropout; concat; max pool over pitch classes; dropout; FC -> 4."""

    variant = "harmonics"

    def __init__(self, spec: ArchitectureSpec, blinders: np.ndarray, seed: int = 0, dtype=np.float32):
        if spec.variant != "harmonics":
            raise ValueError("HarmonicsModel requires the harmonics variant")
        blinders = np.asarray(blinders, dtype=dtype)
        if blinders.ndim != 2 or blinders.shape[1] != spec.n_mels:
            raise ValueError(f"blinders must be (n_branches, {spec.n_mels})")
        self.spec = spec
        self.blinders = blinders
        self.n_branches = blinders.shape[0]
        self.dtype = dtype

        rng = np.random.default_rng(seed)
        c = spec.channels
        self.convs = [
            Conv2d(1, c, (spec.n_mels, 1), rng=rng, dtype=dtype) for _ in range(self.n_branches)
        ]
        self.bns = [BatchNorm(c, dtype=dtype) for _ in range(self.n_branches)]
        self.relus = [ReLU() for _ in range(self.n_branches)]
        self.branch_dropouts = [Dropout(spec.dropout_rate) for _ in range(self.n_branches)]
        self.head_dropout = Dropout(spec.dropout_rate)
        self.fc = Dense(c, len(QUADRANTS), rng=rng, dtype=dtype)
        self._cache = None
        self.feature_maps = None  # (B, branches, C, T) post-ReLU, set by forward
        self.d_feature_maps = None  # same shape, set by backward

    # --- parameter plumbing -------------------------------------------------

    def _layers_with_params(self):
        layers = []
        for p in range(self.n_branches):
            layers.append((f"branch{p}.conv", self.convs[p]))
            layers.append((f"branch{p}.bn", self.bns[p]))
        layers.append(("fc", self.fc))
        return layers

    def parameters(self):
        out = []
        for prefix, layer in self._layers_with_params():
            for name, arr in layer.params():
                out.append((f"{prefix}.{name}", arr))
        return out

    def gradients(self):
        out = []
        for prefix, layer in self._layers_with_params():
            for name, arr in layer.grads():
                out.append((f"{prefix}.{name}", arr))
        return out

    def buffers(self):
        out = []
        for prefix, layer in self._layers_with_params():
            for name, arr in layer.buffers():
                out.append((f"{prefix}.{name}", arr))
        return out

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.parameters())

    # --- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        """x: (batch, n_mels, n_frames) normalized mel grids. Returns logits."""
        if x.ndim != 3 or x.shape[1] != self.spec.n_mels:
            raise ValueError(f"expected (batch, {self.spec.n_mels}, T) input, got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        batch, _, t = x.shape

        pooled = []
        feats = []
        for p in range(self.n_branches):
            xb = (x * self.blinders[p][None, :, None])[:, None, :, :]
            z = self.convs[p].forward(xb)
            z = self.bns[p].forward(z, train=train)
            a = self.relus[p].forward(z)  # (B, C, 1, T)
            feats.append(a[:, :, 0, :])
            avg = a.mean(axis=(2, 3))
            avg = self.branch_dropouts[p].forward(avg, train=train, rng=rng)
            pooled.append(avg)
        self.feature_maps = np.stack(feats, axis=1)

        stacked = np.stack(pooled, axis=1)  # (B, branches, C)
        maxed = stacked.max(axis=1)
        max_mask = stacked == maxed[:, None, :]
        tie_counts = max_mask.sum(axis=1, keepdims=True)

        h = self.head_dropout.forward(maxed, train=train, rng=rng)
        logits = self.fc.forward(h)
        self._cache = (batch, t, max_mask, tie_counts)
        return logits

    def backward(self, dlogits: np.ndarray):
        """Populate parameter gradients (and d_feature_maps) from dlogits."""
        if self._cache is None:
            raise RuntimeError("backward before forward")
        batch, t, max_mask, tie_counts = self._cache

        dh = self.fc.backward(dlogits)
        dmax = self.head_dropout.backward(dh)
        dstacked = max_mask * (dmax[:, None, :] / tie_counts)

        dfeats = []
        for p in range(self.n_branches):
            davg = self.branch_dropouts[p].backward(dstacked[:, p, :])
            da = np.broadcast_to(davg[:, :, None, None], (batch, davg.shape[1], 1, t)) / t
            da = da.astype(self.dtype)
            dfeats.append(da[:, :, 0, :])
            dz = self.relus[p].backward(da)
            dz = self.bns[p].backward(dz)
            self.convs[p].backward(dz)
        self.d_feature_maps = np.stack(dfeats, axis=1)
        self._cache = None


class BenchmarkModel:
    """Reduced-depth comparison nets with conventional filter geometries.

    square / tall_rect / wide_rect: four conv->BN->ReLU->2x2-max-pool blocks.
    time / frequency: one wide (1xb) or tall (ax1) conv layer, global pooling,
    and an extra hidden fully connected layer. time_frequency: both one-layer
    branches concatenated before the hidden layer.
    """

    def __init__(self, spec: ArchitectureSpec, seed: int = 0, dtype=np.float32):
        if spec.variant == "harmonics":
            raise ValueError("use HarmonicsModel for the harmonics variant")
        self.spec = spec
        self.variant = spec.variant
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        n_out = len(QUADRANTS)

        kernels = {"square": (3, 3), "tall_rect": (6, 3), "wide_rect": (3, 6)}
        self.branches = []  # list of layer lists run on the same input
        self.head = []
        if spec.variant in kernels:
            k = kernels[spec.variant]
            layers = []
            in_c = 1
            for c in spec.block_channels:
                layers += [
                    Conv2d(in_c, c, k, rng=rng, dtype=dtype),
                    BatchNorm(c, dtype=dtype),
                    ReLU(),
                    MaxPool2d(2),
                ]
                in_c = c
            layers.append(GlobalAvgPool())
            self.branches.append(layers)
            self.head = [Dropout(spec.dropout_rate), Dense(in_c, n_out, rng=rng, dtype=dtype)]
        else:
            tall = (spec.onelayer_length, 1)
            wide = (1, spec.onelayer_length)
            geoms = {"frequency": [tall], "time": [wide], "time_frequency": [tall, wide]}
            c = spec.onelayer_channels
            for kernel in geoms[spec.variant]:
                self.branches.append(
                    [
                        Conv2d(1, c, kernel, rng=rng, dtype=dtype),
                        BatchNorm(c, dtype=dtype),
                        ReLU(),
                        GlobalAvgPool(),
                    ]
                )
            joined = c * len(self.branches)
            self.head = [
                Dropout(spec.dropout_rate),
                Dense(joined, spec.hidden, rng=rng, dtype=dtype),
                ReLU(),
                Dense(spec.hidden, n_out, rng=rng, dtype=dtype),
            ]
        self._widths = None
        self.feature_maps = None

    def _all_layers(self):
        for i, branch in enumerate(self.branches):
            for j, layer in enumerate(branch):
                yield f"branch{i}.{j}", layer
        for j, layer in enumerate(self.head):
            yield f"head.{j}", layer

    def parameters(self):
        return [
            (f"{prefix}.{name}", arr)
            for prefix, layer in self._all_layers()
            for name, arr in layer.params()
        ]

    def gradients(self):
        return [
            (f"{prefix}.{name}", arr)
            for prefix, layer in self._all_layers()
            for name, arr in layer.grads()
        ]

    def buffers(self):
        return [
            (f"{prefix}.{name}", arr)
            for prefix, layer in self._all_layers()
            for name, arr in layer.buffers()
        ]

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.parameters())

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        x = x.astype(self.dtype, copy=False)[:, None, :, :]
        outs = []
        feats = []
        for branch in self.branches:
            h = x
            for layer in branch:
                h = layer.forward(h, train=train, rng=rng)
                if isinstance(layer, ReLU):
                    feats.append(h)
            outs.append(h)
        self.feature_maps = feats[-len(self.branches):]
        self._widths = [o.shape[1] for o in outs]
        h = np.concatenate(outs, axis=1)
        for layer in self.head:
            h = layer.forward(h, train=train, rng=rng)
        return h

    def backward(self, dlogits: np.ndarray):
        d = dlogits
        for layer in reversed(self.head):
            d = layer.backward(d)
        splits = np.cumsum(self._widths)[:-1]
        for branch, db in zip(self.branches, np.split(d, splits, axis=1)):
            for layer in reversed(branch):
                db = layer.backward(db)


def build_model(spec: ArchitectureSpec, blinders=None, seed: int = 0, dtype=np.float32):
    if spec.variant == "harmonics":
        if blinders is None:
            from .harmonics import build_all_blinders
            from .spectro import build_mel_filterbank

            bank = build_mel_filterbank(n_mels=spec.n_mels)
            blinders = np.stack([b.weights for b in build_all_blinders(bank)])
        return HarmonicsModel(spec, blinders, seed=seed, dtype=dtype)
    return BenchmarkModel(spec, seed=seed, dtype=dtype)


# --- prediction -------------------------------------------------------------

def predict_distribution(model, mel_grids: np.ndarray) -> np.ndarray:
    """Inference-mode softmax distributions, one row per clip."""
    logits = model.forward(np.atleast_3d(mel_grids), train=False)
    return softmax(logits.astype(np.float64))


def predict_label(model, mel_grids: np.ndarray) -> np.ndarray:
    """Argmax quadrant index; ties go to the lowest index."""
    return np.argmax(predict_distribution(model, mel_grids), axis=1)


# --- evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    confusion: np.ndarray  # (4, 4), rows = truth, cols = prediction
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "per_class": {
                q: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, q in enumerate(QUADRANTS)
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "accuracy": self.accuracy,
        }

    def to_text(self) -> str:
        lines = [f"{'':10s}{'Precision':>11s}{'Recall':>9s}{'F1':>9s}{'Support':>9s}"]
        for i, q in enumerate(QUADRANTS):
            lines.append(
                f"{q:10s}{self.precision[i]:11.4f}{self.recall[i]:9.4f}"
                f"{self.f1[i]:9.4f}{int(self.support[i]):9d}"
            )
        lines.append(
            f"{'Weighted':10s}{self.weighted_precision:11.4f}"
            f"{self.weighted_recall:9.4f}{self.weighted_f1:9.4f}"
            f"{int(self.support.sum()):9d}"
        )
        lines.append(f"Accuracy (= weighted recall): {self.accuracy:.4f}")
        return "\n".join(lines)


def evaluate(preds, truth, n_classes: int = 4) -> EvalReport:
    """Per-class and support-weighted precision/recall/F1; 0/0 counts as 0."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)

    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    support = confusion.sum(axis=1).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)

    total = support.sum()
    w = support / total if total > 0 else np.zeros(n_classes)
    return EvalReport(
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support.astype(np.int64),
        weighted_precision=float(precision @ w),
        weighted_recall=float(recall @ w),
        weighted_f1=float(f1 @ w),
        accuracy=float(recall @ w),
    )


# --- training ---------------------------------------------------------------

def train(x_train, y_train, spec: ArchitectureSpec, cfg: TrainConfig,
          x_val=None, y_val=None, blinders=None):
    """Mini-batch Adam training; returns (model, log).

    The log is a list of dicts (epoch, split, loss, accuracy, f1). When
    validation data is given, the parameters of the epoch with the best
    validation weighted F1 are restored before returning.
    """
    x_train = np.asarray(x_train)
    y_train = np.asarray(y_train, dtype=np.int64)
    if x_train.shape[0] == 0:
        raise ValueError("empty training set")

    model = build_model(spec, blinders=blinders, seed=cfg.seed)
    opt = Adam([arr for _, arr in model.parameters()], lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    log = []
    best = (-1.0, None)
    n = x_train.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        batch_preds = np.empty(n, dtype=np.int64)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = model.forward(x_train[idx], train=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, y_train[idx])
            model.backward(dlogits)
            opt.step([arr for _, arr in model.gradients()])
            losses.append(loss)
            batch_preds[idx] = np.argmax(logits, axis=1)

        # train metrics come from the train-mode batch outputs (no extra pass)
        train_report = evaluate(batch_preds, y_train)
        log.append({
            "epoch": epoch,
            "split": "train",
            "loss": float(np.mean(losses)),
            "accuracy": train_report.accuracy,
            "f1": train_report.weighted_f1,
        })
        if x_val is not None:
            val_logits = model.forward(np.asarray(x_val), train=False)
            val_loss, _ = softmax_cross_entropy(val_logits, np.asarray(y_val, dtype=np.int64))
            val_report = evaluate(np.argmax(val_logits, axis=1), y_val)
            log.append({
                "epoch": epoch,
                "split": "val",
                "loss": val_loss,
                "accuracy": val_report.accuracy,
                "f1": val_report.weighted_f1,
            })
            if val_report.weighted_f1 > best[0]:
                snapshot = [arr.copy() for _, arr in model.parameters() + model.buffers()]
                best = (val_report.weighted_f1, snapshot)

    if best[1] is not None:
        for (_, arr), saved in zip(model.parameters() + model.buffers(), best[1]):
            arr[...] = saved
    return model, log


# --- dataset orchestration ---------------------------------------------------

def stratified_song_folds(records, k: int = 10, seed: int = 0):
    """Partition songs into k folds stratified by each song's majority
    quadrant; all clips of a song land in the same fold.

    records: sequence with .song_id and .quadrant (int 0-3) attributes.
    Returns a list of k (train_indices, test_indices) pairs.
    """
    songs = {}
    for i, rec in enumerate(records):
        songs.setdefault(rec.song_id, []).append(i)
    if len(songs) < k:
        raise ValueError(f"need at least {k} songs, got {len(songs)}")

    rng = np.random.default_rng(seed)
    strata = {}
    for song_id, idxs in songs.items():
        quadrants = [records[i].quadrant for i in idxs]
        majority = int(np.bincount(quadrants, minlength=4).argmax())
        strata.setdefault(majority, []).append(song_id)

    fold_songs = [[] for _ in range(k)]
    cursor = 0
    for stratum in sorted(strata):
        ids = sorted(strata[stratum])
        rng.shuffle(ids)
        for song_id in ids:
            fold_songs[cursor % k].append(song_id)
            cursor += 1

    folds = []
    for f in range(k):
        test_set = set(fold_songs[f])
        test = [i for i, rec in enumerate(records) if rec.song_id in test_set]
        train_idx = [i for i, rec in enumerate(records) if rec.song_id not in test_set]
        folds.append((train_idx, test))
    return folds


def balance_subsample(records, cap: float = 1.5, seed: int = 0):
    """Randomly drop clips from over-represented quadrants until the largest
    quadrant has at most `cap` times the clips of the smallest."""
    if cap <= 1:
        raise ValueError("cap must be > 1")
    rng = np.random.default_rng(seed)
    by_quadrant = {}
    for i, rec in enumerate(records):
        by_quadrant.setdefault(rec.quadrant, []).append(i)
    if not by_quadrant:
        return list(records)
    smallest = min(len(v) for v in by_quadrant.values())
    target = int(np.floor(cap * smallest))
    keep = []
    for q in sorted(by_quadrant):
        idxs = by_quadrant[q]
        if len(idxs) > target:
            idxs = list(rng.choice(idxs, size=target, replace=False))
        keep.extend(idxs)
    return [records[i] for i in sorted(keep)]


# --- checkpointing -----------------------------------------------------------

_CKPT_MAGIC = b"MELHARM1\n"


def save_checkpoint(path, model, seed: int | None = None, metrics: dict | None = None):
    """Versioned container: magic, JSON header, little-endian float32
    parameter blobs, float64 buffer blobs (running batch statistics), then
    the blinder matrix (if any), all in declaration order."""
    names, arrays = zip(*model.parameters())
    blobs = [np.ascontiguousarray(a, dtype="<f4") for a in arrays]
    buffer_items = model.buffers()
    header = {
        "version": 1,
        "spec": asdict(model.spec),
        "seed": seed,
        "metrics": metrics or {},
        "params": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, blobs)],
        "buffers": [{"name": n, "shape": list(a.shape)} for n, a in buffer_items],
        "has_blinders": hasattr(model, "blinders"),
    }
    if header["has_blinders"]:
        header["blinder_shape"] = list(model.blinders.shape)
    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob.tobytes())
        for _, buf in buffer_items:
            fh.write(np.ascontiguousarray(buf, dtype="<f8").tobytes())
        if header["has_blinders"]:
            fh.write(np.ascontiguousarray(model.blinders, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Rebuild the model from a checkpoint file."""
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError("not a melharm checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        arrays = []
        for entry in header["params"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            arrays.append(
                np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(entry["shape"]).copy()
            )
        buffer_arrays = []
        for entry in header.get("buffers", []):
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buffer_arrays.append(
                np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(entry["shape"]).copy()
            )
        blinders = None
        if header.get("has_blinders"):
            shape = header["blinder_shape"]
            count = int(np.prod(shape))
            blinders = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape).copy()

    spec_dict = dict(header["spec"])
    spec_dict["block_channels"] = tuple(spec_dict["block_channels"])
    spec = ArchitectureSpec(**spec_dict)
    model = build_model(spec, blinders=blinders, seed=header.get("seed") or 0)
    for (name, arr), loaded in zip(model.parameters(), arrays):
        arr[...] = loaded.astype(arr.dtype)
    for (name, buf), loaded in zip(model.buffers(), buffer_arrays):
        buf[...] = loaded
    return model, header
