"""Train the pitch-class CNN on the synthetic 4-quadrant dataset.

The synthetic generator controls valence with interval structure (consonant
stacks vs. quarter-tone clusters) and arousal with harmonic richness (many
vs. few partials). This is a deliberately small, fast run —
expect well-above-chance but not polished accuracy. The acceptance suite
trains the full-size version (40 clips per quadrant, 50 epochs) to >= 0.85
held-out accuracy.
"""

import os
import tempfile

from melharm.dataset import features_for_clipset, synth_dataset
from melharm.model import (
    ArchitectureSpec,
    TrainConfig,
    evaluate,
    predict_label,
    save_checkpoint,
    stratified_song_folds,
    train,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

with tempfile.TemporaryDirectory() as tmp:
    clipset = synth_dataset(n_per_quadrant=10, seed=7, out_dir=tmp)
    print(f"synthesized {len(clipset)} clips, quadrant counts "
          f"{clipset.quadrant_counts().tolist()}")
    x, y = features_for_clipset(clipset)

print(f"features: {x.shape}")

train_idx, test_idx = stratified_song_folds(clipset.records, k=4, seed=0)[0]
model, log = train(
    x[train_idx], y[train_idx],
    ArchitectureSpec(variant="harmonics"),
    TrainConfig(epochs=25, learning_rate=2e-3, seed=0),
    x_val=x[test_idx], y_val=y[test_idx],
)

for entry in log:
    if entry["split"] == "val":
        print(f"epoch {entry['epoch']:2d}: val loss {entry['loss']:.3f} "
              f"acc {entry['accuracy']:.2f}")

report = evaluate(predict_label(model, x[test_idx]), y[test_idx])
print("\nheld-out report:")
print(report.to_text())

ckpt = os.path.join(OUT, "demo.ckpt")
save_checkpoint(ckpt, model, seed=0, metrics={"val_f1": report.weighted_f1})
print(f"\nwrote {ckpt}")
