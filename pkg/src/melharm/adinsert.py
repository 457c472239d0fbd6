"""Jensen-Shannon distance on emotion distributions and ad-slot selection.

KL terms use base-2 logarithms so the distance is a metric bounded by 1.
A 30-second content window is summarized by averaging the distributions of
its five 6-second clips; the chosen insertion slot minimizes the distance
to the ad's distribution, ties going to the earliest slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import QUADRANTS

SIMPLEX_TOL = 1e-6
CLIPS_PER_SLOT = 5


def _check_simplex(p, name="distribution"):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (len(QUADRANTS),):
        raise ValueError(f"{name} must have {len(QUADRANTS)} entries")
    if np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{name} is not on the probability simplex: {p}")
    return np.clip(p, 0.0, None)


def _kl_bits(p, m):
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def js_distance(p, q) -> float:
    """sqrt(0.5*KL(p||m) + 0.5*KL(q||m)) with m the midpoint; in [0, 1]."""
    p = _check_simplex(p, "p")
    q = _check_simplex(q, "q")
    m = 0.5 * (p + q)
    divergence = 0.5 * _kl_bits(p, m) + 0.5 * _kl_bits(q, m)
    return float(np.sqrt(max(divergence, 0.0)))


def content_slot_distribution(clip_distributions) -> np.ndarray:
    """Average the five 6-second clip distributions of a 30-second window."""
    dists = [_check_simplex(d, f"clip {i}") for i, d in enumerate(clip_distributions)]
    if len(dists) != CLIPS_PER_SLOT:
        raise ValueError(f"expected exactly {CLIPS_PER_SLOT} clip distributions, got {len(dists)}")
    return np.mean(dists, axis=0)


@dataclass(frozen=True)
class InsertionPlan:
    content_id: str
    ad_id: str
    distances: tuple  # JS distance per slot
    chosen_slot: int  # argmin, earliest on ties
    tie_policy: str = "earliest"

    def to_dict(self):
        return {
            "content_id": self.content_id,
            "ad_id": self.ad_id,
            "distances": list(self.distances),
            "chosen_slot": self.chosen_slot,
            "tie_policy": self.tie_policy,
        }


def select_insertion(slots, ad, content_id: str = "", ad_id: str = "") -> InsertionPlan:
    """Pick the insertion slot whose distribution is JS-closest to the ad."""
    if len(slots) == 0:
        raise ValueError("need at least one candidate slot")
    distances = tuple(js_distance(slot, ad) for slot in slots)
    return InsertionPlan(
        content_id=content_id,
        ad_id=ad_id,
        distances=distances,
        chosen_slot=int(np.argmin(distances)),  # argmin takes the earliest on ties
    )


def plan_report(plans_by_model: dict, truth_distances: dict | None = None,
                outcomes: dict | None = None) -> dict:
    """Summarize chosen slots per model over a complete content x ad grid.

    truth_distances / outcomes are optional lookups keyed by
    (content_id, ad_id, slot); outcomes values are (skip_rate, recall_rate)
    from an external experiment file.
    """
    if not plans_by_model:
        raise ValueError("no plans given")
    grid = {(p.content_id, p.ad_id) for plans in plans_by_model.values() for p in plans}
    rows = []
    for model_name, plans in plans_by_model.items():
        cells = {(p.content_id, p.ad_id) for p in plans}
        if cells != grid:
            missing = sorted(grid - cells)
            raise ValueError(f"model {model_name!r} missing grid cells: {missing}")
        row = {
            "model": model_name,
            "mean_model_distance": float(np.mean([p.distances[p.chosen_slot] for p in plans])),
        }
        if truth_distances is not None:
            row["mean_truth_distance"] = float(np.mean([
                truth_distances[(p.content_id, p.ad_id, p.chosen_slot)] for p in plans
            ]))
        if outcomes is not None:
            pairs = [outcomes[(p.content_id, p.ad_id, p.chosen_slot)] for p in plans]
            row["mean_skip_rate"] = float(np.mean([s for s, _ in pairs]))
            row["mean_recall_rate"] = float(np.mean([r for _, r in pairs]))
        rows.append(row)
    return {"rows": rows}


def report_to_text(report: dict) -> str:
    rows = report["rows"]
    cols = [c for c in ("mean_model_distance", "mean_truth_distance",
                        "mean_skip_rate", "mean_recall_rate") if c in rows[0]]
    header = f"{'Model':24s}" + "".join(f"{c:>22s}" for c in cols)
    lines = [header]
    for row in rows:
        lines.append(f"{row['model']:24s}" + "".join(f"{row[c]:22.4f}" for c in cols))
    return "\n".join(lines)


# --- file interfaces ---------------------------------------------------------

def load_predictions_csv(path) -> dict:
    """entity_id,q1,q2,q3,q4 rows -> {entity_id: distribution}."""
    import csv

    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            dist = np.array([float(row[f"q{i}"]) for i in range(1, 5)])
            out[row["entity_id"]] = _check_simplex(dist, row["entity_id"])
    return out


def load_outcomes_csv(path) -> dict:
    """content,ad,slot,skip_rate,recall_rate rows keyed by (content, ad, slot)."""
    import csv

    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["content"], row["ad"], int(row["slot"]))
            out[key] = (float(row["skip_rate"]), float(row["recall_rate"]))
    return out


def save_plans_json(path, plans, report=None):
    payload = {"plans": [p.to_dict() for p in plans]}
    if report is not None:
        payload["report"] = report
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
