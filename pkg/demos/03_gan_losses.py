"""The four training modes on one batch: which loss terms each keeps."""
import numpy as np

from eegshape import gan
from eegshape.stimuli import canonical_shapes

rng = np.random.default_rng(0)
labels = np.arange(5)
batch = gan.GanBatch(reprs=rng.uniform(0, 1, (5, 40)).astype(np.float32), labels=labels,
                     noise=rng.standard_normal((5, 20)).astype(np.float32), real=canonical_shapes()[labels])
g, d = gan.init_generator(0), gan.init_discriminator(1)

for mode in gan.MODES:
    cfg = gan.GanTrainConfig(mode=mode)
    gl, dl = gan.generator_loss(batch, g, d, cfg), gan.discriminator_loss(batch, g, d, cfg)
    g_terms = ", ".join(f"{k} {v:.4f}" for k, v in gl.terms.items())
    d_terms = ", ".join(f"{k} {v:.4f}" for k, v in dl.terms.items())
    print(f"{mode:5s}  L_g {gl.total:.4f} [{g_terms}]")
    print(f"       L_d {dl.total:.4f} [{d_terms}]")

fake = gan.generator_forward_batch(g, batch.reprs, batch.noise)[0]
print("\nS_r of untrained fakes vs their stimuli:", np.round(gan.semantic_distance(batch.real, fake), 4))
