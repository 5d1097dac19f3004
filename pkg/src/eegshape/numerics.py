"""Layer kernels with explicit backward passes, Adam, and a gradient checker.

Image tensors use channels-last layout. Every spatial op accepts a single
sample ``[H, W, C]`` or a batch ``[B, H, W, C]`` and returns the same rank it
was given. Ops preserve the floating dtype of their inputs, so the same code
trains in float32 and is checked in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import NonFiniteError, ShapeError

__all__ = [
    "conv2d", "conv2d_backward", "conv_output_size",
    "maxpool2d", "maxpool2d_backward", "max_unpool2d", "PoolSwitches",
    "upsample2x", "upsample2x_backward", "upsample2x_conv2d", "upsample2x_conv2d_backward",
    "dense", "dense_backward",
    "relu", "relu_backward", "sigmoid", "sigmoid_backward",
    "tanh", "tanh_backward", "softmax", "softmax_backward",
    "AdamState", "adam_step", "Adam",
    "grad_check", "GradCheckReport", "truncated_normal",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [H,W,C] or [B,H,W,C], got shape {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` along one spatial axis."""
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if kernel > size:
            raise ShapeError(f"kernel {kernel} larger than input {size} with VALID padding")
        return (size - kernel) // stride + 1, 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
    # (B, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match kernel layout
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * c)


def _conv_geometry(x, kernels, stride, padding):
    _, h, w, cin = x.shape
    kh, kw, kcin, cout = kernels.shape
    if kcin != cin:
        raise ShapeError(f"input has {cin} channels but kernels expect {kcin}")
    sh, sw = _pair(stride)
    ho, pt, pb = conv_output_size(h, kh, sh, padding)
    wo, pl, pr = conv_output_size(w, kw, sw, padding)
    return (kh, kw, cout, sh, sw, ho, wo), ((0, 0), (pt, pb), (pl, pr), (0, 0))


def conv2d(x, kernels, bias, stride=(1, 1), padding: str = "same") -> np.ndarray:
    """2-D cross-correlation plus bias.

    ``kernels`` is ``[kh, kw, Cin, Cout]``. SAME padding follows the
    usual convention (output ``ceil(H/stride)``, extra pad row/column at the
    bottom/right).
    """
    xb, single = _as_batch(x)
    kernels = np.asarray(kernels)
    (kh, kw, cout, sh, sw, ho, wo), pads = _conv_geometry(xb, kernels, stride, padding)
    xp = np.pad(xb, pads)
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    out = cols @ kernels.reshape(-1, cout) + bias
    out = out.reshape(xb.shape[0], ho, wo, cout)
    return out[0] if single else out


def conv2d_backward(grad, x, kernels, stride=(1, 1), padding: str = "same",
                    input_grad: bool = True, param_grads: bool = True):
    """Gradients of :func:`conv2d` w.r.t. ``(x, kernels, bias)``.

    Entries not requested via ``input_grad``/``param_grads`` come back as ``None``.
    """
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad)
    kernels = np.asarray(kernels)
    (kh, kw, cout, sh, sw, ho, wo), pads = _conv_geometry(xb, kernels, stride, padding)
    g2 = gb.reshape(-1, cout)
    dx = dk = db = None
    if param_grads:
        cols = _im2col(np.pad(xb, pads), kh, kw, sh, sw, ho, wo)
        dk = (cols.T @ g2).reshape(kernels.shape)
        db = g2.sum(axis=0)
        del cols
    if input_grad:
        dx = _conv_input_grad(gb, xb.shape, kernels, (kh, kw, cout, sh, sw, ho, wo), pads)
        if single:
            dx = dx[0]
    return dx, dk, db


def _conv_input_grad(gb, xshape, kernels, geom, pads):
    kh, kw, cout, sh, sw, ho, wo = geom
    b, h, w, cin = xshape
    (_, _), (pt, pb), (pl, pr), _ = pads
    if sh == sw == 1:
        # full correlation of the output gradient with the flipped, transposed kernel
        ft, fl = kh - 1 - pt, kw - 1 - pl
        fb, fr = h - ho + kh - 1 - ft, w - wo + kw - 1 - fl
        gp = np.pad(gb, ((0, 0), (ft, fb), (fl, fr), (0, 0)))
        flipped = kernels[::-1, ::-1].transpose(0, 1, 3, 2)
        cols = _im2col(gp, kh, kw, 1, 1, h, w)
        return (cols @ flipped.reshape(-1, cin)).reshape(b, h, w, cin)
    dcols = (gb.reshape(-1, cout) @ kernels.reshape(-1, cout).T).reshape(b, ho, wo, kh, kw, cin)
    dxp = np.zeros((b, h + pt + pb, w + pl + pr, cin), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += dcols[:, :, :, i, j, :]
    return dxp[:, pt:pt + h, pl:pl + w, :]


def _phase_taps(k: int, pad: int) -> np.ndarray:
    """``A[a, t, i] = 1`` when tap ``i`` of a size-``k`` kernel on the x2-upsampled
    grid reads low-resolution offset ``t - r`` for output phase ``a``."""
    offs = np.array([[(a + i - pad) // 2 for i in range(k)] for a in (0, 1)])
    r = -offs.min()
    if offs.max() != r:
        raise ShapeError(f"kernel size {k} has no centred phase decomposition")
    taps = np.zeros((2, 2 * r + 1, k))
    for a in (0, 1):
        taps[a, offs[a] + r, np.arange(k)] = 1.0
    return taps


def _phase_kernels(kernels):
    kh, kw, cin, cout = kernels.shape
    ah = _phase_taps(kh, (kh - 1) // 2).astype(kernels.dtype)
    aw = _phase_taps(kw, (kw - 1) // 2).astype(kernels.dtype)
    kc = np.einsum("aiI,bjJ,IJco->ijcabo", ah, aw, kernels, optimize=True)
    return kc.reshape(ah.shape[1], aw.shape[1], cin, 4 * cout), ah, aw


def upsample2x_conv2d(x, kernels, bias) -> np.ndarray:
    """``conv2d(upsample2x(x), kernels, bias)`` with SAME padding, stride 1.

    Evaluated as one conv over the low-resolution input whose output
    channels hold the four sub-pixel phases, avoiding the 4x larger
    intermediate.
    """
    xb, single = _as_batch(x)
    kernels = np.asarray(kernels)
    cout = kernels.shape[3]
    kc, _, _ = _phase_kernels(kernels)
    y = conv2d(xb, kc, np.tile(bias, 4))
    b, h, w, _ = y.shape
    out = y.reshape(b, h, w, 2, 2, cout).transpose(0, 1, 3, 2, 4, 5).reshape(b, 2 * h, 2 * w, cout)
    return out[0] if single else out


def upsample2x_conv2d_backward(grad, x, kernels, input_grad: bool = True):
    """Gradients of :func:`upsample2x_conv2d` w.r.t. ``(x, kernels, bias)``."""
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad)
    kernels = np.asarray(kernels)
    cin, cout = kernels.shape[2:]
    kc, ah, aw = _phase_kernels(kernels)
    b, h, w, _ = xb.shape
    gc = gb.reshape(b, h, 2, w, 2, cout).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, 4 * cout)
    dx, dkc, dbc = conv2d_backward(gc, xb, kc, input_grad=input_grad)
    dkc = dkc.reshape(ah.shape[1], aw.shape[1], cin, 2, 2, cout)
    dk = np.einsum("aiI,bjJ,ijcabo->IJco", ah, aw, dkc, optimize=True)
    db = dbc.reshape(4, cout).sum(axis=0)
    if dx is not None and single:
        dx = dx[0]
    return dx, dk, db


@dataclass
class PoolSwitches:
    """Argmax positions recorded by :func:`maxpool2d`.

    ``rows``/``cols`` have the pooled tensor's shape and hold input-space
    indices of the selected maxima.
    """

    rows: np.ndarray
    cols: np.ndarray
    input_shape: tuple[int, ...]
    disjoint: bool = False  # windows never overlap, so no two cells share a position


def maxpool2d(x, window=(2, 2), stride=(2, 2)) -> tuple[np.ndarray, PoolSwitches]:
    """Ceil-mode max pooling; ties go to the first element in row-major order."""
    xb, single = _as_batch(x)
    if xb.size == 0:
        raise ShapeError("cannot pool an empty tensor")
    wh, ww = _pair(window)
    sh, sw = _pair(stride)
    if min(wh, ww, sh, sw) < 1:
        raise ShapeError("pooling window and stride must be >= 1")
    b, h, w, c = xb.shape
    ho, wo = -(-h // sh), -(-w // sw)
    hp, wp = max((ho - 1) * sh + wh, h), max((wo - 1) * sw + ww, w)
    xp = np.pad(xb, ((0, 0), (0, hp - h), (0, wp - w), (0, 0)), constant_values=-np.inf)
    win = sliding_window_view(xp, (wh, ww), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
    flat = win.reshape(b, ho, wo, c, wh * ww)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[None, :, None, None] * sh + idx // ww
    cols = np.arange(wo)[None, None, :, None] * sw + idx % ww
    disjoint = wh <= sh and ww <= sw
    if single:
        return out[0], PoolSwitches(rows[0], cols[0], (h, w, c), disjoint)
    return out, PoolSwitches(rows, cols, (b, h, w, c), disjoint)


def max_unpool2d(pooled, switches: PoolSwitches) -> np.ndarray:
    """Scatter pooled values back to their argmax positions; zeros elsewhere."""
    pb, single = _as_batch(pooled)
    rows, cols = switches.rows, switches.cols
    shape = switches.input_shape
    if single:
        rows, cols, shape = rows[None], cols[None], (1, *shape)
    out = np.zeros(shape, dtype=pb.dtype)
    b, ho, wo, c = pb.shape
    bi = np.broadcast_to(np.arange(b)[:, None, None, None], pb.shape)
    ci = np.broadcast_to(np.arange(c)[None, None, None, :], pb.shape)
    if switches.disjoint:
        out[bi, rows, cols, ci] = pb
    else:
        np.add.at(out, (bi, rows, cols, ci), pb)
    return out[0] if single else out


def maxpool2d_backward(grad, switches: PoolSwitches) -> np.ndarray:
    """Route pooled gradients to the recorded maxima."""
    return max_unpool2d(grad, switches)


def upsample2x(x) -> np.ndarray:
    """Nearest-neighbour x2 upsampling: every cell fills a 2x2 block."""
    xb, single = _as_batch(x)
    out = xb.repeat(2, axis=1).repeat(2, axis=2)
    return out[0] if single else out


def upsample2x_backward(grad) -> np.ndarray:
    gb, single = _as_batch(grad)
    b, h, w, c = gb.shape
    out = gb.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))
    return out[0] if single else out


def dense(x, weights, bias) -> np.ndarray:
    """Affine map ``x @ weights + bias`` for ``x`` of shape ``[n]`` or ``[B, n]``."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"input length {x.shape[-1]} does not match weight rows {weights.shape[0]}")
    if np.shape(bias) != (weights.shape[1],):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match {weights.shape[1]} outputs")
    return x @ weights + bias


def dense_backward(grad, x, weights):
    """Return ``(dx, dweights, dbias)``."""
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad)
    dx = grad @ weights.T
    return dx, x2.T @ g2, g2.sum(axis=0)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad, x):
    return grad * (x > 0)


def sigmoid(x):
    return expit(x)


def sigmoid_backward(grad, y):
    """Backward through sigmoid given its output ``y``."""
    return grad * y * (1 - y)


def tanh(x):
    return np.tanh(x)


def tanh_backward(grad, y):
    return grad * (1 - y * y)


def softmax(x, axis: int = -1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(grad, y, axis: int = -1):
    return y * (grad - np.sum(grad * y, axis=axis, keepdims=True))


def truncated_normal(rng: np.random.Generator, shape, std: float, limit: float = 2.0,
                     dtype=np.float32) -> np.ndarray:
    """Zero-mean Gaussian samples redrawn until they fall within ``±limit·std``."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > limit
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > limit
    return (out * std).astype(dtype)


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def for_param(cls, param, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        z = np.zeros_like(param)
        return cls(z, z.copy(), learning_rate, beta1, beta2, epsilon)


def _check_finite(grad, name, step):
    if not np.all(np.isfinite(grad)):
        n_nan = int(np.isnan(grad).sum())
        n_inf = int(np.isinf(grad).sum())
        raise NonFiniteError(
            f"non-finite gradient for parameter {name!r} at update {step}: "
            f"{n_nan} NaN, {n_inf} Inf of {grad.size} entries")


def adam_step(param, grad, state: AdamState, name: str = "param"):
    """One bias-corrected Adam update. Returns ``(new_param, state)``; ``state`` is updated in place."""
    param = np.asarray(param)
    grad = np.asarray(grad, dtype=param.dtype)
    if not (param.shape == grad.shape == state.first_moment.shape == state.second_moment.shape):
        raise ShapeError(f"shape mismatch for {name!r}: param {param.shape}, grad {grad.shape}, "
                         f"moments {state.first_moment.shape}")
    _check_finite(grad, name, state.step + 1)
    b1, b2 = state.beta1, state.beta2
    state.step += 1
    state.first_moment = b1 * state.first_moment + (1 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1 - b2) * grad * grad
    m_hat = state.first_moment / (1 - b1 ** state.step)
    v_hat = state.second_moment / (1 - b2 ** state.step)
    new = param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new.astype(param.dtype, copy=False), state


class Adam:
    """Adam over a dict of named parameters, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate=1e-3, beta1=0.9,
                 beta2=0.999, epsilon=1e-8):
        self.states = {k: AdamState.for_param(v, learning_rate, beta1, beta2, epsilon)
                       for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        # validate every block before touching any, so a bad batch leaves params intact
        for name, g in grads.items():
            _check_finite(np.asarray(g), name, self.states[name].step + 1)
        for name, g in grads.items():
            params[name], _ = adam_step(params[name], g, self.states[name], name)


# --------------------------------------------------------------------------
# Gradient checking

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    probes: dict[str, int] = field(default_factory=dict)
    kinks: dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        # NaN (every probe of a block straddled a kink) counts as a failure
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0, key=lambda e: np.inf if np.isnan(e) else e)

    def __str__(self):
        lines = []
        for k, e in self.errors.items():
            kinks = self.kinks.get(k, 0)
            note = f", {kinks} at kinks" if kinks else ""
            flag = "  FAIL" if not e < self.tolerance else ""
            lines.append(f"{k:<28s} {e:.3e} ({self.probes.get(k, '?')} probes{note}){flag}")
        return "\n".join(lines)


def grad_check(fn: Callable[[dict], tuple[float, dict]], params: dict[str, np.ndarray],
               tolerance: float = 1e-4, h: float = 1e-5, max_probes: int | None = None,
               abs_floor: float = 1e-6, seed: int = 0,
               loss_fn: Callable[[dict], float] | None = None) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``fn(params)`` must return ``(loss, grads)`` where ``grads`` maps a subset
    of ``params`` keys to gradient arrays. Inputs can be checked too by
    including them in ``params``. Everything is cast to float64 first.

    The error of a block is ``max|analytic - numeric|`` over probed entries
    divided by the larger of the two gradients' max magnitude (floored at
    ``abs_floor``). Blocks larger than ``max_probes`` are probed at a seeded
    random subset of entries. ``loss_fn``, when given, is a cheaper
    loss-only twin of ``fn`` used for the perturbed evaluations.

    A probe that disagrees is re-measured with step ``h / 10``. If the two
    numeric estimates disagree with each other by more than the tolerance,
    the loss is not differentiable within ``h`` of that point (a ReLU or
    max-pool kink), so the probe is counted under ``kinks`` rather than as
    an error. A wrong analytic gradient still fails, since both estimates
    agree with each other but not with it.
    """
    if loss_fn is None:
        def loss_fn(p):
            return fn(p)[0]
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = fn(p64)
    rng = np.random.default_rng(seed)
    errors, probes, kinks = {}, {}, {}

    def central(flat, i, step):
        old = flat[i]
        flat[i] = old + step
        fp = float(loss_fn(p64))
        flat[i] = old - step
        fm = float(loss_fn(p64))
        flat[i] = old
        return (fp - fm) / (2 * step)

    for name, g in grads.items():
        flat = p64[name].reshape(-1)
        g = np.asarray(g, dtype=np.float64).reshape(-1)
        if max_probes is None or flat.size <= max_probes:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_probes, replace=False))
        numeric = np.array([central(flat, i, h) for i in idx])
        analytic = g[idx]
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), abs_floor)
        err = np.abs(analytic - numeric) / scale
        smooth = np.ones(idx.size, dtype=bool)
        for n in np.flatnonzero(err >= tolerance):
            finer = central(flat, idx[n], h / 10)
            smooth[n] = abs(finer - numeric[n]) / scale <= tolerance
        errors[name] = float(err[smooth].max(initial=0.0)) if smooth.any() else float("nan")
        probes[name] = int(idx.size)
        kinks[name] = int((~smooth).sum())
    return GradCheckReport(errors, tolerance, probes, kinks)
