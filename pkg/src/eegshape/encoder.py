"""CNN that classifies EEG segments and exposes its 40-d penultimate layer.

Pipeline: conv(32) -> pool -> conv(64) -> pool -> flatten -> dense(40)+ReLU
(the latent representation) -> dense(5) -> softmax. The same network,
built for a different input size, doubles as the shape scorer in
:mod:`eegshape.evaluate`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .convnet import conv_stack_backward, conv_stack_forward, flat_features, init_conv_stack
from .eeg import DatasetSplit, EEGSegment, N_CHANNELS, WINDOW, stack_segments
from .errors import NonFiniteError, ShapeError

log = logging.getLogger(__name__)

REPR_DIM = 40
N_CLASSES = 5


@dataclass
class EncoderConfig:
    epochs: int = 1000
    batch_size: int = 50
    learning_rate: float = 5e-4
    init_std: float = 0.05
    seed: int = 0


def init_encoder(seed_or_rng, input_hw=(WINDOW, N_CHANNELS), std: float = 0.05) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed_or_rng)
    params = init_conv_stack(rng, std)
    params["fc_repr.weights"] = nx.truncated_normal(rng, (flat_features(*input_hw), REPR_DIM), std)
    params["fc_repr.bias"] = np.zeros(REPR_DIM, np.float32)
    params["fc_out.weights"] = nx.truncated_normal(rng, (REPR_DIM, N_CLASSES), std)
    params["fc_out.bias"] = np.zeros(N_CLASSES, np.float32)
    return params


def _as_images(x, params) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4 or x.shape[-1] != 1:
        raise ShapeError(f"expected segment(s) [M, N] or [B, M, N], got {np.shape(x)}")
    want = params["fc_repr.weights"].shape[0]
    got = flat_features(x.shape[1], x.shape[2])
    if got != want:
        raise ShapeError(f"input of spatial size {x.shape[1:3]} does not fit this network")
    return x, single


def forward(params, x):
    """Batched forward pass. Returns ``(repr, logits, probs, cache)``."""
    feats, conv_cache = conv_stack_forward(params, x)
    flat = feats.reshape(feats.shape[0], -1)
    pre = nx.dense(flat, params["fc_repr.weights"], params["fc_repr.bias"])
    rep = nx.relu(pre)
    logits = nx.dense(rep, params["fc_out.weights"], params["fc_out.bias"])
    probs = nx.softmax(logits)
    return rep, logits, probs, (conv_cache, feats.shape, flat, pre, rep)


def backward(params, cache, dlogits, drepr=None, input_grad: bool = False):
    """Gradients from ``dL/dlogits`` (and optionally ``dL/drepr``)."""
    conv_cache, fshape, flat, pre, rep = cache
    drep, dw, db = nx.dense_backward(dlogits, rep, params["fc_out.weights"])
    grads = {"fc_out.weights": dw, "fc_out.bias": db}
    if drepr is not None:
        drep = drep + drepr
    dpre = nx.relu_backward(drep, pre)
    dflat, dw, db = nx.dense_backward(dpre, flat, params["fc_repr.weights"])
    grads["fc_repr.weights"], grads["fc_repr.bias"] = dw, db
    conv_grads, dx = conv_stack_backward(params, conv_cache, dflat.reshape(fshape), input_grad=input_grad)
    grads.update(conv_grads)
    return grads, dx


def trace_shapes(params, input_hw=(WINDOW, N_CHANNELS)) -> list[tuple[str, tuple[int, ...]]]:
    """Per-sample activation shapes recorded from a real forward pass on zeros."""
    x = np.zeros((1, *input_hw, 1), np.float32)
    rep, logits, _, (conv_cache, fshape, flat, _, _) = forward(params, x)
    # each stage's pooled output is the next stage's input; the last one is fshape
    pooled = [c[0].shape for c in conv_cache[1:]] + [fshape]
    trace = [("input", x.shape[1:])]
    for i, ((_, pre, _), out) in enumerate(zip(conv_cache, pooled), start=1):
        trace += [(f"conv{i}", pre.shape[1:]), (f"pool{i}", tuple(out[1:]))]
    trace += [("flatten", flat.shape[1:]), ("repr", rep.shape[1:]), ("logits", logits.shape[1:])]
    return trace


def encoder_forward(seg, params):
    """Latent representation and class probabilities for one or many segments.

    Accepts an :class:`EEGSegment`, an array ``[M, N]`` or a batch ``[B, M, N]``.
    """
    if isinstance(seg, EEGSegment):
        seg = seg.values
    x, single = _as_images(seg, params)
    rep, _, probs, _ = forward(params, x)
    return (rep[0], probs[0]) if single else (rep, probs)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


def predict(params, x, batch_size: int = 500) -> np.ndarray:
    """Class probabilities for ``x [B, H, W]``, evaluated in fixed-size chunks."""
    x, _ = _as_images(x, params)
    out = [forward(params, x[i:i + batch_size])[2] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, N_CLASSES), np.float32)


def accuracy(params, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float((predict(params, x).argmax(axis=1) == y).mean())


def fit_classifier(params, x, y, config: EncoderConfig, x_test=None, y_test=None, callback=None):
    """Minibatch Adam on cross-entropy. Mutates and returns ``params`` with a history list."""
    x, _ = _as_images(x, params)
    rng = np.random.default_rng([config.seed, 1])
    opt = nx.Adam(params, learning_rate=config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        total, correct = 0.0, 0
        for bi, start in enumerate(range(0, len(x), config.batch_size)):
            idx = order[start:start + config.batch_size]
            _, logits, probs, cache = forward(params, x[idx])
            loss, dlogits = cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads, _ = backward(params, cache, dlogits)
            opt.step(params, grads)
            total += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
        row = {"epoch": epoch, "train_loss": total / len(x), "train_acc": correct / len(x),
               "test_acc": accuracy(params, x_test, y_test) if x_test is not None else float("nan")}
        history.append(row)
        log.debug("epoch %d loss %.4f train %.3f test %.3f", epoch, row["train_loss"],
                  row["train_acc"], row["test_acc"])
        if callback is not None and callback(row):
            break
    return params, history


def train_encoder(split: DatasetSplit, config: EncoderConfig | None = None, callback=None):
    """Train on ``split.train``; history rows carry per-epoch train/test accuracy.

    ``callback(row)`` runs after every epoch; returning True stops training.
    """
    config = config or EncoderConfig()
    if not split.train:
        raise ValueError("training split is empty")
    params = init_encoder(config.seed, std=config.init_std)
    x, y = stack_segments(split.train)
    xt, yt = stack_segments(split.test)
    return fit_classifier(params, x, y, config, xt, yt, callback=callback)


def extract_representations(segments: list[EEGSegment], params, batch_size: int = 500):
    """``(repr [n, 40], one-hot labels [n, 5])`` in input order."""
    x, _ = stack_segments(segments)
    labels = np.stack([s.label for s in segments]) if segments else np.zeros((0, N_CLASSES), np.float32)
    if not segments:
        return np.zeros((0, REPR_DIM), np.float32), labels
    xi, _ = _as_images(x, params)
    reps = [forward(params, xi[i:i + batch_size])[0] for i in range(0, len(xi), batch_size)]
    return np.concatenate(reps), labels
