"""Scoring of generated shapes: inception score, inception accuracy, sample grids.

The "inception network" here is a task classifier with the encoder's
architecture, trained on augmented rasterized stimuli. The score uses a
single split over all scored images.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rel_entr

from . import encoder as enc
from . import gan
from .eeg import CLASSES
from .errors import TrainingError
from .stimuli import HEIGHT, WIDTH, canonical_shapes

log = logging.getLogger(__name__)

GRID_GAP = 2
BACKGROUND = -1.0


# --------------------------------------------------------------------------
# Scoring classifier

@dataclass
class AugmentConfig:
    max_shift: int = 4
    noise_std: float = 0.05
    train_per_class: int = 200
    heldout_per_class: int = 100
    target_accuracy: float = 0.99
    max_epochs: int = 30
    batch_size: int = 50
    learning_rate: float = 5e-4


def shift_image(img: np.ndarray, dy: int, dx: int, fill: float = BACKGROUND) -> np.ndarray:
    """Translate by whole pixels; vacated pixels take ``fill``."""
    h, w = img.shape
    out = np.full_like(img, fill)
    ys, yd = slice(max(0, -dy), min(h, h - dy)), slice(max(0, dy), min(h, h + dy))
    xs, xd = slice(max(0, -dx), min(w, w - dx)), slice(max(0, dx), min(w, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def augmented_shapes(n_per_class: int, rng: np.random.Generator, config: AugmentConfig):
    """Randomly shifted, noisy copies of the canonical shapes with class labels."""
    base = canonical_shapes()
    labels = np.repeat(np.arange(len(CLASSES)), n_per_class)
    shifts = rng.integers(-config.max_shift, config.max_shift + 1, size=(len(labels), 2))
    images = np.stack([shift_image(base[k], dy, dx) for k, (dy, dx) in zip(labels, shifts)])
    images += rng.normal(0.0, config.noise_std, images.shape).astype(np.float32)
    return np.clip(images, -1.0, 1.0), labels


def train_scoring_classifier(seed: int = 0, config: AugmentConfig | None = None):
    """Encoder-architecture CNN on 40x56 shapes.

    Training stops at the first epoch whose held-out augmented accuracy
    reaches ``target_accuracy``. Returns ``(params, history)``.
    """
    config = config or AugmentConfig()
    rng = np.random.default_rng([seed, 10])
    x, y = augmented_shapes(config.train_per_class, rng, config)
    xh, yh = augmented_shapes(config.heldout_per_class, rng, config)
    params = enc.init_encoder([seed, 11], input_hw=(HEIGHT, WIDTH))
    fit_cfg = enc.EncoderConfig(epochs=config.max_epochs, batch_size=config.batch_size,
                                learning_rate=config.learning_rate, seed=seed)
    params, history = enc.fit_classifier(params, x, y, fit_cfg, xh, yh,
                                         callback=lambda row: row["test_acc"] >= config.target_accuracy)
    best = history[-1]["test_acc"]
    if best < config.target_accuracy:
        raise TrainingError(f"scoring classifier reached {best:.3f} < {config.target_accuracy} held-out accuracy "
                            f"after {len(history)} epochs; try another seed, more epochs or milder augmentation")
    return params, history


# --------------------------------------------------------------------------
# Metrics

def inception_score_from_probs(probs) -> float:
    """``exp(mean_x KL(p(y|x) || p(y)))`` with ``p(y)`` the mean of the rows."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("need a non-empty [n, classes] score matrix")
    marginal = probs.mean(axis=0)
    kl = rel_entr(probs, marginal[None, :]).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score(images, scorer) -> float:
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("no images to score")
    return inception_score_from_probs(enc.predict(scorer, images))


def inception_accuracy(images, labels, reprs, discriminator) -> float:
    """Fraction of images whose discriminator class head picks the conditioning label.

    ``reprs`` are the representations the images were generated from
    (zeros for the unconditioned mode). Ties go to the lowest class index.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no generated samples")
    _, probs, _ = gan.discriminator_forward_batch(discriminator, np.asarray(images), reprs)
    return float((probs.argmax(axis=1) == labels).mean())


# --------------------------------------------------------------------------
# Generation helpers

def sample_conditions(reprs, labels, n_per_class: int, rng: np.random.Generator):
    """Draw ``n_per_class`` representations of every class (with replacement), in class order."""
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    picks = []
    for k, name in enumerate(CLASSES):
        pool = np.flatnonzero(labels == k)
        if len(pool) == 0:
            raise ValueError(f"no representations of class {name!r}")
        picks.append(rng.choice(pool, size=n_per_class, replace=len(pool) < n_per_class))
    idx = np.concatenate(picks)
    return np.asarray(reprs)[idx], labels[idx]


def generate(generator, reprs, conditioned: bool, rng: np.random.Generator, batch_size: int = 200):
    """Images for each representation, with fresh standard-normal noise."""
    reprs = np.asarray(reprs, np.float32)
    cond = reprs if conditioned else np.zeros_like(reprs)
    noise = rng.standard_normal((len(reprs), gan.NOISE_DIM)).astype(np.float32)
    out = [gan.generator_forward_batch(generator, cond[i:i + batch_size], noise[i:i + batch_size])[0]
           for i in range(0, len(reprs), batch_size)]
    return np.concatenate(out), cond


def grid_size(n_per_class: int) -> tuple[int, int]:
    rows = len(CLASSES)
    return rows * HEIGHT + (rows - 1) * GRID_GAP, n_per_class * WIDTH + (n_per_class - 1) * GRID_GAP


def tile_grid(images, n_per_class: int) -> np.ndarray:
    """Lay out class-ordered images as a 5 x n grid separated by white gaps."""
    h, w = grid_size(n_per_class)
    grid = np.ones((h, w), np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, n_per_class)
        y, x = r * (HEIGHT + GRID_GAP), c * (WIDTH + GRID_GAP)
        grid[y:y + HEIGHT, x:x + WIDTH] = img
    return grid


def sample_grid(generator, reprs, labels, n_per_class: int = 8, seed: int = 0, conditioned: bool = True):
    """Normalized-domain grid: one row per class (circle ... rectangle), ``n_per_class`` columns."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng([seed, 20])
    cond, _ = sample_conditions(reprs, labels, n_per_class, rng)
    images, _ = generate(generator, cond, conditioned, rng)
    return tile_grid(images, n_per_class)


# --------------------------------------------------------------------------
# Report

@dataclass
class EvalReport:
    inception_score: float
    inception_accuracy: float
    class_counts: dict[str, int]
    mode: str
    lambda_align: float
    gan_seed: int
    eval_seed: int
    scorer_seed: int
    is_splits: int = 1
    extra: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"inception_score={self.inception_score!r}",
                 f"inception_accuracy={self.inception_accuracy!r}",
                 f"mode={self.mode}",
                 f"lambda_align={self.lambda_align!r}",
                 f"gan_seed={self.gan_seed}",
                 f"eval_seed={self.eval_seed}",
                 f"scorer_seed={self.scorer_seed}",
                 f"is_splits={self.is_splits}"]
        lines += [f"count.{k}={v}" for k, v in self.class_counts.items()]
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        counts = {k[6:]: int(kv.pop(k)) for k in list(kv) if k.startswith("count.")}
        known = dict(
            inception_score=float(kv.pop("inception_score")),
            inception_accuracy=float(kv.pop("inception_accuracy")),
            mode=kv.pop("mode"), lambda_align=float(kv.pop("lambda_align")),
            gan_seed=int(kv.pop("gan_seed")), eval_seed=int(kv.pop("eval_seed")),
            scorer_seed=int(kv.pop("scorer_seed")), is_splits=int(kv.pop("is_splits")))
        return cls(class_counts=counts, extra=kv, **known)


def evaluate_gan(generator, discriminator, scorer, reprs, labels, config: gan.GanTrainConfig,
                 samples_per_class: int = 1000, seed: int = 0, scorer_seed: int = 0) -> EvalReport:
    """Generate ``samples_per_class`` images per class and score them."""
    rng = np.random.default_rng([seed, 30])
    cond, y = sample_conditions(reprs, labels, samples_per_class, rng)
    images, used = generate(generator, cond, config.conditioned, rng)
    is_ = inception_score(images, scorer)
    acc = inception_accuracy(images, y, used, discriminator)
    counts = {name: int((y == k).sum()) for k, name in enumerate(CLASSES)}
    return EvalReport(is_, acc, counts, config.mode, config.lambda_align, config.seed, seed, scorer_seed)
