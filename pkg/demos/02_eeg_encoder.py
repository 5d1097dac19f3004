"""Synthesize EEG, segment and normalize it, then train the CNN encoder for a few epochs."""
import numpy as np

from eegshape import eeg, encoder

recs = eeg.synth_eeg(4, seed=7)
split, stats = eeg.prepare_dataset(recs, seed=7)
print(f"{len(recs)} recordings -> {len(split.train)} train / {len(split.test)} test segments of 10x14")

params = encoder.init_encoder(7)
for name, shape in encoder.trace_shapes(params):
    print(f"  {name:8s} {shape}")

params, history = encoder.train_encoder(split, encoder.EncoderConfig(epochs=5, seed=7))
for row in history:
    print(f"epoch {row['epoch']}: loss {row['train_loss']:.3f}  train {row['train_acc']:.3f}  "
          f"test {row['test_acc']:.3f}")

reprs, labels = encoder.extract_representations(split.test, params)
print("representation matrix", reprs.shape, "mean norm", float(np.linalg.norm(reprs, axis=1).mean()))
