"""Choosing where to insert an ad by emotional fit.

Each 30-second content window is summarized by averaging the quadrant
distributions of its five 6-second clips; the chosen slot minimizes the
Jensen-Shannon distance (base-2, a metric in [0, 1]) between the window and
the ad. Ties go to the earliest slot.
"""

import numpy as np

from melharm.adinsert import (
    content_slot_distribution,
    js_distance,
    plan_report,
    report_to_text,
    select_insertion,
)

rng = np.random.default_rng(0)

# Three candidate windows in a show: an exuberant opening, an anxious
# mid-section, and a calm ending. Each is five 6-second clip distributions.
def window(center, spread=0.08):
    clips = np.clip(center + rng.normal(0, spread, (5, 4)), 1e-3, None)
    return [c / c.sum() for c in clips]

slots = [
    content_slot_distribution(window(np.array([0.70, 0.10, 0.05, 0.15]))),
    content_slot_distribution(window(np.array([0.10, 0.65, 0.15, 0.10]))),
    content_slot_distribution(window(np.array([0.10, 0.05, 0.15, 0.70]))),
]
for i, s in enumerate(slots):
    print(f"slot {i}: {np.round(s, 3).tolist()}")

ads = {
    "energetic_ad": np.array([0.6, 0.2, 0.05, 0.15]),
    "calm_ad": np.array([0.1, 0.05, 0.2, 0.65]),
}

plans = []
for ad_id, ad in ads.items():
    plan = select_insertion(slots, ad, content_id="show", ad_id=ad_id)
    plans.append(plan)
    print(f"\n{ad_id}: distances {np.round(plan.distances, 3).tolist()} "
          f"-> slot {plan.chosen_slot}")

print("\n" + report_to_text(plan_report({"harmonics": plans})))

# sanity: distance between a slot and itself is 0; disjoint supports give 1
print("\nd(slot0, slot0) =", js_distance(slots[0], slots[0]))
print("d(pure Q1, pure Q2) =", js_distance([1, 0, 0, 0], [0, 1, 0, 0]))
