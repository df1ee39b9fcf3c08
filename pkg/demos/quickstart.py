"""Tiny end-to-end run: synthesize a 1-subject cohort, preprocess, build the
topogram dataset, train the CNN briefly, and print test metrics.

Usage: python3 demos/quickstart.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

from neurotopo import cnn, dsp, synthgen, topomap

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
print(f"working in {out}")

cohort = synthgen.generate_cohort(synthgen.SynthConfig(
    n_subjects=1, trials_per_hand=10, seed=7))
print(f"synthesized {len(cohort)} trials "
      f"({cohort[0].samples.shape[0]} channels x "
      f"{cohort[0].samples.shape[1]} samples)")

clean = [dsp.preprocess_trial(t) for t in cohort]
manifest = topomap.build_dataset(clean, out / "ds", seed=7, store_fullres=False)
print(f"dataset: {len(manifest.entries)} images "
      f"({len(manifest.split_entries('train'))} train / "
      f"{len(manifest.split_entries('test'))} test)")

model = cnn.CnnModel(cnn.CnnConfig(epochs=3, seed=0))
report = cnn.train_cnn(model, manifest)
last = report.per_epoch[-1]
print(f"trained {len(report.per_epoch)} epochs in {report.wall_time:.0f}s; "
      f"test accuracy {last['test_acc']:.3f}")
print("confusion matrix (rows=true, cols=predicted):")
for row in report.final_confusion:
    print("   ", [int(v) for v in row])
