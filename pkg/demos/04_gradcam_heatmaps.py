"""Pitch-class heatmaps: which classes drove a quadrant decision, and when.

For a clip and a target quadrant, each of the 12 branch feature maps is
weighted by the time-averaged gradient of that quadrant's pre-softmax score
and rectified, giving one heatmap row per pitch class over time. Bright rows
mean "this pitch class's harmonics pushed toward the target quadrant here".

Run demos/03_train_synthetic.py first to produce demos/out/demo.ckpt.
"""

import os
import sys
import tempfile

import numpy as np

from melharm.dataset import features_for_clipset, synth_dataset
from melharm.explain import brightness_report, clip_brightness, grad_cam, render_heatmap
from melharm.model import load_checkpoint

OUT = os.path.join(os.path.dirname(__file__), "out")
CKPT = os.path.join(OUT, "demo.ckpt")
if not os.path.exists(CKPT):
    sys.exit("run demos/03_train_synthetic.py first (needs demos/out/demo.ckpt)")

model, header = load_checkpoint(CKPT)
print(f"loaded checkpoint (metrics: {header['metrics']})")

with tempfile.TemporaryDirectory() as tmp:
    clipset = synth_dataset(n_per_quadrant=2, seed=21, out_dir=tmp)
    x, y = features_for_clipset(clipset)

# one heatmap per clip, targeted at the clip's true quadrant
for grid, label, rec in zip(x, y, clipset.records):
    h = grad_cam(grid, model, int(label), clip_id=rec.song_id)
    print(f"{rec.song_id}: target Q{label + 1}, brightness {clip_brightness(h):9.1f}")
render_heatmap(os.path.join(OUT, "heatmap_example.pgm"),
               grad_cam(x[0], model, int(y[0])), upscale=4)
print(f"wrote {OUT}/heatmap_example.pgm (rows = pitch classes A..G#)")

# brightness means per true quadrant, with the four ordering verdicts
# (calm-consonant Q4 brightest, tense-dissonant Q2 dimmest). On this quick
# demo checkpoint some verdicts may flip; the fully trained acceptance run
# satisfies all four.
report = brightness_report(list(x), y, model)
print("\nmean brightness per quadrant:", np.round(report.means, 1).tolist())
print("ordering verdicts:", report.verdicts)
