"""A short GAN run on encoder representations, with a sample grid written to PGM."""
import sys

from eegshape import eeg, encoder, gan, pipeline
from eegshape.evaluate import sample_grid
from eegshape.stimuli import write_pgm

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
recs = eeg.synth_eeg(4, seed=7)
model, _, _ = pipeline.fit_encoder(recs, encoder.EncoderConfig(epochs=5, seed=7))
r_tr, y_tr, r_te, y_te = pipeline.encoded_split(recs, model)

cfg = gan.GanTrainConfig(mode="full", epochs=epochs, seed=0)
g, d, history = pipeline.fit_gan(r_tr, y_tr, cfg, pool_per_class=10)
step = max(1, epochs // 10)
for row in history[step - 1::step]:
    print(f"epoch {row['epoch']:3d}: L_g {row['L_g']:.3f}  L_d {row['L_d']:.3f}  S_r {row['mean_S_r']:.3f}  "
          f"class acc {row['class_acc']:.2f}")

write_pgm("gan_grid.pgm", sample_grid(g, r_te, y_te, n_per_class=6), domain="normalized")
print("wrote gan_grid.pgm (one row per class)")
