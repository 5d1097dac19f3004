"""Two-stage conv feature extractor shared by the encoder, discriminator and scorer.

Each stage is 3x3 SAME conv + ReLU + 2x2/2 ceil-mode max pooling, with 32
then 64 filters.
"""
from __future__ import annotations

import numpy as np

from . import numerics as nx

FILTERS = (32, 64)


def pooled_size(h: int, w: int, stages: int = 2) -> tuple[int, int]:
    for _ in range(stages):
        h, w = -(-h // 2), -(-w // 2)
    return h, w


def flat_features(h: int, w: int) -> int:
    ph, pw = pooled_size(h, w)
    return ph * pw * FILTERS[-1]


def init_conv_stack(rng: np.random.Generator, std: float, in_channels: int = 1,
                    prefix: str = "") -> dict[str, np.ndarray]:
    params = {}
    cin = in_channels
    for i, cout in enumerate(FILTERS, start=1):
        params[f"{prefix}conv{i}.kernels"] = nx.truncated_normal(rng, (3, 3, cin, cout), std)
        params[f"{prefix}conv{i}.bias"] = np.zeros(cout, np.float32)
        cin = cout
    return params


def conv_stack_forward(params, x, prefix: str = ""):
    """``x`` is ``[B, H, W, C]``. Returns ``(features [B, h, w, 64], cache)``."""
    cache = []
    h = x
    for i in range(1, len(FILTERS) + 1):
        k, b = params[f"{prefix}conv{i}.kernels"], params[f"{prefix}conv{i}.bias"]
        pre = nx.conv2d(h, k, b)
        act = nx.relu(pre)
        pooled, sw = nx.maxpool2d(act)
        cache.append((h, pre, sw))
        h = pooled
    return h, cache


def conv_stack_backward(params, cache, grad, prefix: str = "", input_grad: bool = False,
                        param_grads: bool = True):
    """Returns ``(grads, dx)``; ``dx`` is ``None`` unless ``input_grad``."""
    grads = {}
    g = grad
    for i in range(len(FILTERS), 0, -1):
        x_in, pre, sw = cache[i - 1]
        g = nx.relu_backward(nx.maxpool2d_backward(g, sw), pre)
        g, dk, db = nx.conv2d_backward(g, x_in, params[f"{prefix}conv{i}.kernels"],
                                       input_grad=input_grad or i > 1, param_grads=param_grads)
        if param_grads:
            grads[f"{prefix}conv{i}.kernels"] = dk
            grads[f"{prefix}conv{i}.bias"] = db
    return grads, g
