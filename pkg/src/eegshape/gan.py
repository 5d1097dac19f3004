"""Multi-task conditional GAN that reconstructs shape images from EEG representations.

Generator: ``[repr : noise]`` -> dense(64·M·N) + sigmoid -> reshape
``[M, N, 64]`` -> (upsample x2 -> 5x5 conv(32) + ReLU) -> (upsample x2 ->
5x5 conv(1) + tanh) -> ``[4M, 4N]`` image in (-1, 1).

Discriminator: the encoder's conv stack over the image, flattened and
concatenated with the representation, dense(100) + ReLU, then a
real/fake sigmoid head and a 5-way softmax class head.

Modes switch loss terms and conditioning:

========  ============  ==========  =========
mode      conditioning  class loss  alignment
========  ============  ==========  =========
full      yes           yes         yes
acgan     yes           yes         no
cgan      yes           no          no
gan       no (zeros)    no          no
========  ============  ==========  =========
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .convnet import conv_stack_backward, conv_stack_forward, flat_features, init_conv_stack
from .encoder import N_CLASSES, REPR_DIM
from .errors import NonFiniteError, ShapeError

log = logging.getLogger(__name__)

NOISE_DIM = 20
SEG_HW = (10, 14)
IMAGE_HW = (4 * SEG_HW[0], 4 * SEG_HW[1])
FC_DEPTH = 64
HIDDEN = 100
PROB_CLAMP = 1e-7
MODES = ("full", "acgan", "cgan", "gan")


@dataclass
class GanTrainConfig:
    lambda_align: float = 0.01
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 150
    batch_size: int = 50
    seed: int = 0
    mode: str = "full"
    init_std: float = 0.02
    # None walks the whole training pool each epoch; an int caps the epoch at that many batches
    batches_per_epoch: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda_align < 0:
            raise ValueError("lambda_align must be >= 0")

    @property
    def conditioned(self) -> bool:
        return self.mode != "gan"

    @property
    def class_loss(self) -> bool:
        return self.mode in ("full", "acgan")

    @property
    def alignment(self) -> bool:
        return self.mode == "full"


# --------------------------------------------------------------------------
# Parameters

def init_generator(seed_or_rng, std: float = 0.02) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed_or_rng)
    m, n = SEG_HW
    return {
        "fc.weights": nx.truncated_normal(rng, (REPR_DIM + NOISE_DIM, FC_DEPTH * m * n), std),
        "fc.bias": np.zeros(FC_DEPTH * m * n, np.float32),
        "block1.kernels": nx.truncated_normal(rng, (5, 5, FC_DEPTH, 32), std),
        "block1.bias": np.zeros(32, np.float32),
        "block2.kernels": nx.truncated_normal(rng, (5, 5, 32, 1), std),
        "block2.bias": np.zeros(1, np.float32),
    }


def init_discriminator(seed_or_rng, std: float = 0.02) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed_or_rng)
    params = init_conv_stack(rng, std)
    params.update({
        "fc.weights": nx.truncated_normal(rng, (flat_features(*IMAGE_HW) + REPR_DIM, HIDDEN), std),
        "fc.bias": np.zeros(HIDDEN, np.float32),
        "source.weights": nx.truncated_normal(rng, (HIDDEN, 1), std),
        "source.bias": np.zeros(1, np.float32),
        "class.weights": nx.truncated_normal(rng, (HIDDEN, N_CLASSES), std),
        "class.bias": np.zeros(N_CLASSES, np.float32),
    })
    return params


# --------------------------------------------------------------------------
# Generator

def _batch_vec(v, dim, what):
    v = np.asarray(v)
    single = v.ndim == 1
    if single:
        v = v[None]
    if v.ndim != 2 or v.shape[1] != dim:
        raise ShapeError(f"{what} must have length {dim}, got shape {np.shape(v)}")
    return v, single


def generator_forward_batch(params, reprs, noise):
    """``reprs [B, 40]``, ``noise [B, 20]`` -> ``(images [B, 40, 56], cache)``."""
    reprs, _ = _batch_vec(reprs, REPR_DIM, "representation")
    noise, _ = _batch_vec(noise, NOISE_DIM, "noise")
    b = reprs.shape[0]
    h0 = np.concatenate([reprs, noise], axis=1).astype(params["fc.weights"].dtype, copy=False)
    h1 = nx.sigmoid(nx.dense(h0, params["fc.weights"], params["fc.bias"]))
    grid = h1.reshape(b, *SEG_HW, FC_DEPTH)
    # each block is upsample x2 followed by a 5x5 SAME conv, evaluated fused
    c1 = nx.upsample2x_conv2d(grid, params["block1.kernels"], params["block1.bias"])
    r1 = nx.relu(c1)
    out = nx.tanh(nx.upsample2x_conv2d(r1, params["block2.kernels"], params["block2.bias"]))
    return out[..., 0], (h0, h1, grid, c1, r1, out)


def generator_backward(params, cache, grad_images):
    h0, h1, grid, c1, r1, out = cache
    d = nx.tanh_backward(grad_images[..., None], out)
    dr1, dk2, db2 = nx.upsample2x_conv2d_backward(d, r1, params["block2.kernels"])
    d = nx.relu_backward(dr1, c1)
    dgrid, dk1, db1 = nx.upsample2x_conv2d_backward(d, grid, params["block1.kernels"])
    dh1 = dgrid.reshape(h1.shape)
    _, dw, db = nx.dense_backward(nx.sigmoid_backward(dh1, h1), h0, params["fc.weights"])
    return {"fc.weights": dw, "fc.bias": db, "block1.kernels": dk1, "block1.bias": db1,
            "block2.kernels": dk2, "block2.bias": db2}


def generator_forward(repr_, noise, params) -> np.ndarray:
    """Shape image(s) in the normalized domain for one or many ``(repr, noise)`` pairs."""
    r, single = _batch_vec(repr_, REPR_DIM, "representation")
    z, _ = _batch_vec(noise, NOISE_DIM, "noise")
    imgs, _ = generator_forward_batch(params, r, z)
    return imgs[0] if single else imgs


# --------------------------------------------------------------------------
# Discriminator

def discriminator_forward_batch(params, images, reprs):
    """Returns ``(p_real [B], class_probs [B, 5], cache)``."""
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != IMAGE_HW:
        raise ShapeError(f"images must be [B, {IMAGE_HW[0]}, {IMAGE_HW[1]}], got {images.shape}")
    if np.any(np.abs(images) > 1 + 1e-6):
        raise ValueError("discriminator input outside the normalized [-1, 1] domain")
    reprs, _ = _batch_vec(reprs, REPR_DIM, "representation")
    feats, conv_cache = conv_stack_forward(params, images[..., None])
    b = images.shape[0]
    h = np.concatenate([feats.reshape(b, -1), reprs.astype(feats.dtype, copy=False)], axis=1)
    pre = nx.dense(h, params["fc.weights"], params["fc.bias"])
    hid = nx.relu(pre)
    p_real = nx.sigmoid(nx.dense(hid, params["source.weights"], params["source.bias"]))[:, 0]
    probs = nx.softmax(nx.dense(hid, params["class.weights"], params["class.bias"]))
    return p_real, probs, (conv_cache, feats.shape, h, pre, hid, p_real, probs)


def discriminator_backward(params, cache, d_real, d_probs, input_grad: bool = False,
                           param_grads: bool = True):
    """Gradients from ``dL/dp_real`` and ``dL/dclass_probs``; optionally ``dL/dimages``.

    With ``param_grads=False`` only the image gradient is produced (the
    generator step needs nothing else).
    """
    conv_cache, fshape, h, pre, hid, p_real, probs = cache
    ds = nx.sigmoid_backward(d_real, p_real)[:, None]
    dc = nx.softmax_backward(d_probs, probs)
    dhid_s, dws, dbs = nx.dense_backward(ds, hid, params["source.weights"])
    dhid_c, dwc, dbc = nx.dense_backward(dc, hid, params["class.weights"])
    dpre = nx.relu_backward(dhid_s + dhid_c, pre)
    dh, dw, db = nx.dense_backward(dpre, h, params["fc.weights"])
    nflat = int(np.prod(fshape[1:]))
    grads, dimg = conv_stack_backward(params, conv_cache, dh[:, :nflat].reshape(fshape),
                                      input_grad=input_grad, param_grads=param_grads)
    if param_grads:
        grads.update({"fc.weights": dw, "fc.bias": db, "source.weights": dws, "source.bias": dbs,
                      "class.weights": dwc, "class.bias": dbc})
    return grads, (dimg[..., 0] if dimg is not None else None)


def discriminator_features(params, images, reprs) -> np.ndarray:
    """Hidden-layer pre-activations feeding both heads."""
    return discriminator_forward_batch(params, images, reprs)[2][3]


def discriminator_forward(img, repr_, params):
    """``(p_real, class_probs)`` for one image ``[40, 56]`` or a batch."""
    img = np.asarray(getattr(img, "pixels", img))
    single = img.ndim == 2
    r, _ = _batch_vec(repr_, REPR_DIM, "representation")
    p, probs, _ = discriminator_forward_batch(params, img[None] if single else img, r)
    return (float(p[0]), probs[0]) if single else (p, probs)


# --------------------------------------------------------------------------
# Losses

def _neg_log(p):
    """``-log(clamp(p))`` and its derivative (zero where the clamp is active)."""
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    inside = (p >= PROB_CLAMP) & (p <= 1 - PROB_CLAMP)
    return -np.log(pc), np.where(inside, -1.0 / pc, 0.0)


def semantic_distance(real, fake):
    """Root-mean-square pixel distance between images of equal shape.

    Batched inputs ``[B, H, W]`` give one distance per image.
    """
    real, fake = np.asarray(real, np.float64), np.asarray(fake, np.float64)
    if real.shape != fake.shape:
        raise ShapeError(f"image shapes differ: {real.shape} vs {fake.shape}")
    axes = (-2, -1)
    n_pix = real.shape[-1] * real.shape[-2]
    return np.sqrt(np.sum((real - fake) ** 2, axis=axes)) / math.sqrt(n_pix)


def semantic_distance_grad(real, fake):
    """d S_r / d fake = (fake - real) / (n_pixels · S_r); zero where S_r = 0."""
    s = semantic_distance(real, fake)
    n_pix = real.shape[-1] * real.shape[-2]
    denom = np.where(s > 0, n_pix * s, 1.0)[..., None, None]
    return np.where(s[..., None, None] > 0, (np.asarray(fake, np.float64) - real) / denom, 0.0)


@dataclass
class LossResult:
    total: float
    terms: dict[str, float]
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    stats: dict[str, float] = field(default_factory=dict)


def generator_objective(fake, real, p_fake, probs_fake, labels, config: GanTrainConfig):
    """Generator loss from discriminator outputs on the fakes.

    Returns ``(total, terms, d_fake, d_p_fake, d_probs_fake)`` where the last
    three are gradients of ``total``.
    """
    b = len(labels)
    rows = np.arange(b)
    adv, dp = _neg_log(p_fake)
    terms = {"adversarial": float(adv.mean())}
    d_p = dp / b
    d_probs = np.zeros(probs_fake.shape, dtype=np.float64)
    d_fake = np.zeros(fake.shape, dtype=np.float64)
    total = terms["adversarial"]
    if config.class_loss:
        cls, dc = _neg_log(probs_fake[rows, labels])
        terms["class"] = float(cls.mean())
        d_probs[rows, labels] = dc / b
        total += terms["class"]
    if config.alignment:
        s = semantic_distance(real, fake)
        terms["alignment"] = float(s.mean())
        d_fake = config.lambda_align * semantic_distance_grad(real, fake) / b
        total += config.lambda_align * terms["alignment"]
    return total, terms, d_fake, d_p, d_probs


def discriminator_objective(p_real, probs_real, p_fake, labels, config: GanTrainConfig):
    """Returns ``(total, terms, d_p_real, d_probs_real, d_p_fake)``."""
    b = len(labels)
    rows = np.arange(b)
    lr_, dr = _neg_log(p_real)
    lf, df = _neg_log(1 - p_fake)
    terms = {"real": float(lr_.mean()), "fake": float(lf.mean())}
    total = terms["real"] + terms["fake"]
    d_probs = np.zeros(probs_real.shape, dtype=np.float64)
    if config.class_loss:
        cls, dc = _neg_log(probs_real[rows, labels])
        terms["class"] = float(cls.mean())
        d_probs[rows, labels] = dc / b
        total += terms["class"]
    return total, terms, dr / b, d_probs, -df / b


@dataclass
class GanBatch:
    reprs: np.ndarray   # [B, 40]
    labels: np.ndarray  # [B] class indices
    noise: np.ndarray   # [B, 20]
    real: np.ndarray    # [B, 40, 56] class-matched normalized stimuli

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("empty batch")

    def conditioning(self, config: GanTrainConfig) -> np.ndarray:
        return self.reprs if config.conditioned else np.zeros_like(self.reprs)


def _cast(a, like):
    return np.asarray(a).astype(like.dtype, copy=False)


def generator_loss(batch: GanBatch, gen, disc, config: GanTrainConfig, fake=None,
                   with_grads: bool = True) -> LossResult:
    """Generator objective and its gradients w.r.t. the generator parameters.

    ``fake`` may carry a precomputed ``(images, cache)`` from
    :func:`generator_forward_batch` for the same batch. ``with_grads=False``
    skips the backward pass and leaves ``grads`` empty.
    """
    cond = batch.conditioning(config)
    images, gcache = fake if fake is not None else generator_forward_batch(gen, cond, batch.noise)
    p_fake, probs_fake, dcache = discriminator_forward_batch(disc, images, cond)
    total, terms, d_img, d_p, d_probs = generator_objective(
        images, batch.real, p_fake, probs_fake, batch.labels, config)
    grads = {}
    if with_grads:
        _, d_from_disc = discriminator_backward(disc, dcache, _cast(d_p, p_fake), _cast(d_probs, probs_fake),
                                                input_grad=True, param_grads=False)
        grads = generator_backward(gen, gcache, _cast(d_img, images) + d_from_disc)
    stats = {"mean_s_r": float(semantic_distance(batch.real, images).mean()),
             "class_acc": float((probs_fake.argmax(axis=1) == batch.labels).mean())}
    return LossResult(total, terms, grads, stats)


def discriminator_loss(batch: GanBatch, gen, disc, config: GanTrainConfig, fake=None,
                       with_grads: bool = True) -> LossResult:
    """Discriminator objective and its gradients w.r.t. the discriminator parameters."""
    cond = batch.conditioning(config)
    images = fake[0] if fake is not None else generator_forward_batch(gen, cond, batch.noise)[0]
    b = len(batch.labels)
    # one pass over [real; fake] keeps the two halves' reductions in a fixed order
    both = np.concatenate([_cast(batch.real, images), images])
    p, probs, cache = discriminator_forward_batch(disc, both, np.concatenate([cond, cond]))
    total, terms, d_pr, d_probs_r, d_pf = discriminator_objective(p[:b], probs[:b], p[b:], batch.labels, config)
    grads = {}
    if with_grads:
        d_p = np.concatenate([d_pr, d_pf])
        d_probs = np.concatenate([d_probs_r, np.zeros_like(d_probs_r)])
        grads, _ = discriminator_backward(disc, cache, _cast(d_p, p), _cast(d_probs, probs))
    stats = {"d_real_acc": float((p[:b] > 0.5).mean()), "d_fake_acc": float((p[b:] < 0.5).mean())}
    return LossResult(total, terms, grads, stats)


# --------------------------------------------------------------------------
# Training

HISTORY_COLUMNS = ("epoch", "L_g", "L_d", "mean_S_r", "d_real_acc", "d_fake_acc", "class_acc")


def train_gan(reprs, labels, shapes, config: GanTrainConfig | None = None, callback=None):
    """Alternate a discriminator step and a generator step on every batch.

    ``reprs [n, 40]`` and integer ``labels [n]`` come from the trained
    encoder; ``shapes [5, 40, 56]`` are the normalized canonical stimuli.
    Returns ``(generator, discriminator, history)``.
    """
    config = config or GanTrainConfig()
    reprs = np.asarray(reprs, np.float32)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    shapes = np.asarray(shapes, np.float32)
    if len(reprs) == 0:
        raise ValueError("no training representations")
    gen = init_generator([config.seed, 1], config.init_std)
    disc = init_discriminator([config.seed, 2], config.init_std)
    opt_g = nx.Adam(gen, config.learning_rate, config.beta1, config.beta2)
    opt_d = nx.Adam(disc, config.learning_rate, config.beta1, config.beta2)
    rng = np.random.default_rng([config.seed, 3])
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(reprs))
        if config.batches_per_epoch is not None:
            order = order[:config.batches_per_epoch * config.batch_size]
        acc = {k: 0.0 for k in HISTORY_COLUMNS[1:]}
        n_batches = 0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            noise = rng.standard_normal((len(idx), NOISE_DIM)).astype(np.float32)
            batch = GanBatch(reprs[idx], labels[idx], noise, shapes[labels[idx]])
            fake = generator_forward_batch(gen, batch.conditioning(config), noise)
            d_res = discriminator_loss(batch, gen, disc, config, fake=fake)
            if not np.isfinite(d_res.total):
                raise NonFiniteError(f"discriminator loss diverged at epoch {epoch}, batch {bi}")
            opt_d.step(disc, d_res.grads)
            g_res = generator_loss(batch, gen, disc, config, fake=fake)
            if not np.isfinite(g_res.total):
                raise NonFiniteError(f"generator loss diverged at epoch {epoch}, batch {bi}")
            opt_g.step(gen, g_res.grads)
            acc["L_g"] += g_res.total
            acc["L_d"] += d_res.total
            acc["mean_S_r"] += g_res.stats["mean_s_r"]
            acc["d_real_acc"] += d_res.stats["d_real_acc"]
            acc["d_fake_acc"] += d_res.stats["d_fake_acc"]
            acc["class_acc"] += g_res.stats["class_acc"]
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in acc.items()}}
        history.append(row)
        log.debug("epoch %d L_g %.4f L_d %.4f S_r %.4f", epoch, row["L_g"], row["L_d"], row["mean_S_r"])
        if callback is not None and callback(row):
            break
    return gen, disc, history
