"""Inception score and S_r on hand-made score matrices and images."""
import numpy as np

from eegshape import gan
from eegshape.evaluate import inception_score_from_probs
from eegshape.stimuli import canonical_shapes

print("IS, uniform scores      ", inception_score_from_probs(np.full((100, 5), 0.2)))
print("IS, confident, balanced ", inception_score_from_probs(np.eye(5)[np.arange(100) % 5]))
print("IS, confident, one class", inception_score_from_probs(np.eye(5)[np.zeros(100, int)]))
rng = np.random.default_rng(0)
soft = rng.dirichlet(np.full(5, 0.3), size=100)
print("IS, Dirichlet(0.3) rows ", inception_score_from_probs(soft))

shapes = canonical_shapes()
print("\nS_r between stimuli (rows and columns in class order):")
print(np.round([[float(gan.semantic_distance(a, b)) for b in shapes] for a in shapes], 3))
