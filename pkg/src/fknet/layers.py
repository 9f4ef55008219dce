"""Forward and backward computation for each layer kind.

Every forward returns ``(output, cache)`` where the cache holds exactly what
the matching backward needs.  Backwards ADD parameter gradients into
``Parameter.grad`` (the caller zeroes between steps) and return the gradient
with respect to the layer input.  Kernels accept ``[c,h,w]`` single images or
``[b,c,h,w]`` batches and preserve the input dtype, so the same code serves
both the float32 engine and the float64 finite-difference oracle path.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, RangeError, ShapeError, StateError
from .tensor import DTYPE, Tensor


@dataclass
class Parameter:
    """A learnable tensor with its gradient and momentum buffers.

    ``frozen=True`` excludes the parameter from optimizer updates and lets the
    network truncate backpropagation below it; the value then stays
    bit-identical across any number of steps.
    """

    name: str
    value: Tensor
    grad: Tensor = None
    momentum: Tensor = None
    frozen: bool = False

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum is None:
            self.momentum = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape or self.momentum.shape != self.value.shape:
            raise ShapeError(f"parameter '{self.name}' buffers disagree on shape")


@dataclass(frozen=True)
class ConvConfig:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.out_channels < 1 or self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ConfigError(f"bad convolution config {self}")


@dataclass(frozen=True)
class LrnConfig:
    """Cross-channel response normalization window and exponents."""

    n: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ConfigError(f"lrn window must be odd and >= 1, got {self.n}")
        if self.k <= 0 or self.beta <= 0:
            raise ConfigError("lrn needs k > 0 and beta > 0")


@dataclass
class DropoutState:
    p: float
    mask: Optional[Tensor]  # None in eval mode


def _as_batch(x):
    """Promote [c,h,w] to [1,c,h,w]; returns (batched, was_single)."""
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected rank-3 or rank-4 input, got rank {x.ndim}")


def _pad_hw(x, pad):
    if pad == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def im2col(x, kernel, stride, pad):
    """Rearrange conv windows of [b,c,h,w] into rows of [b*oh*ow, c*k*k]."""
    b, c, h, w = x.shape
    if h + 2 * pad < kernel or w + 2 * pad < kernel:
        raise ShapeError(
            f"kernel {kernel} larger than padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    xp = _pad_hw(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kernel * kernel)
    return np.ascontiguousarray(cols), oh, ow


def col2im(cols, x_shape, kernel, stride, oh, ow, pad):
    """Scatter-add column gradients back onto the [b,c,h,w] input grid."""
    b, c, h, w = x_shape
    grad = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    d = cols.reshape(b, oh, ow, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    # windows overlap whenever stride < kernel, so accumulate per kernel offset
    for i in range(kernel):
        for j in range(kernel):
            grad[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d[
                :, :, i, j
            ]
    if pad:
        grad = grad[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(grad)


@dataclass
class ConvCache:
    cols: Tensor
    x_shape: tuple
    oh: int
    ow: int
    cfg: ConvConfig
    weights: Parameter
    bias: Parameter
    single: bool


def conv2d_forward(x, weights: Parameter, bias: Parameter, cfg: ConvConfig):
    """Convolve x with the kernel bank: [b,c,h,w] -> ([b,oc,oh,ow], cache)."""
    xb, single = _as_batch(x)
    b, c, h, w = xb.shape
    oc, wc, kh, kw = weights.value.shape
    if wc != c or kh != cfg.kernel or kw != cfg.kernel or oc != cfg.out_channels:
        raise ShapeError(
            f"weights {weights.value.shape} do not match input channels {c} and {cfg}"
        )
    cols, oh, ow = im2col(xb, cfg.kernel, cfg.stride, cfg.pad)
    wmat = weights.value.reshape(oc, -1)
    out = cols @ wmat.T + bias.value
    out = np.ascontiguousarray(out.reshape(b, oh, ow, oc).transpose(0, 3, 1, 2))
    cache = ConvCache(cols, xb.shape, oh, ow, cfg, weights, bias, single)
    return (out[0] if single else out), cache


def conv2d_backward(cache: ConvCache, grad_out, need_input_grad=True):
    gb, _ = _as_batch(grad_out)
    b = cache.x_shape[0]
    oc = cache.cfg.out_channels
    g2 = np.ascontiguousarray(gb.transpose(0, 2, 3, 1).reshape(b * cache.oh * cache.ow, oc))
    w = cache.weights
    w.grad += (g2.T @ cache.cols).reshape(w.value.shape)
    cache.bias.grad += g2.sum(axis=0)
    if not need_input_grad:
        return None
    dcols = g2 @ w.value.reshape(oc, -1)
    grad_in = col2im(
        dcols, cache.x_shape, cache.cfg.kernel, cache.cfg.stride, cache.oh, cache.ow,
        cache.cfg.pad,
    )
    return grad_in[0] if cache.single else grad_in


@dataclass
class PoolCache:
    argmax: np.ndarray  # winner index inside each k*k window, lowest on ties
    x_shape: tuple
    kernel: int
    stride: int
    single: bool


def maxpool_forward(x, kernel: int, stride: int):
    """Window maximum over [b,c,h,w]: returns ([b,c,oh,ow], cache with winners)."""
    xb, single = _as_batch(x)
    b, c, h, w = xb.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(xb, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(b, c, oh, ow, kernel * kernel)
    arg = np.argmax(flat, axis=-1)  # np.argmax takes the first max: lowest index
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)
    cache = PoolCache(arg, xb.shape, kernel, stride, single)
    return (out[0] if single else out), cache


def maxpool_backward(cache: PoolCache, grad_out):
    gb, _ = _as_batch(grad_out)
    b, c, h, w = cache.x_shape
    k, s = cache.kernel, cache.stride
    oh, ow = cache.argmax.shape[2], cache.argmax.shape[3]
    wy = cache.argmax // k
    wx = cache.argmax % k
    rows = np.arange(oh)[None, None, :, None] * s + wy
    colix = np.arange(ow)[None, None, None, :] * s + wx
    base = (np.arange(b)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (
        h * w
    )
    flat_idx = base + rows * w + colix
    # overlapping windows can crown the same input cell twice: bincount sums them
    grad = np.bincount(
        flat_idx.ravel(), weights=gb.ravel().astype(np.float64), minlength=b * c * h * w
    )
    grad = grad.reshape(b, c, h, w).astype(gb.dtype)
    return grad[0] if cache.single else grad


def relu_forward(x):
    """Elementwise max(0, x)."""
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(cache, grad_out):
    return grad_out * cache


def _channel_window_sum(a, n):
    """Clipped sliding sum of window n along the channel axis (-3)."""
    half = (n - 1) // 2
    c = a.shape[-3]
    cs = np.cumsum(a, axis=-3)
    zero = np.zeros_like(np.take(cs, [0], axis=-3))
    cs = np.concatenate([zero, cs], axis=-3)
    hi = np.minimum(np.arange(c) + half + 1, c)
    lo = np.maximum(np.arange(c) - half, 0)
    return np.take(cs, hi, axis=-3) - np.take(cs, lo, axis=-3)


def lrn_forward(x, cfg: LrnConfig):
    """Cross-channel normalization: x / (k + (alpha/n) * windowed sum of x^2)^beta."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"lrn needs rank-3 or rank-4 input, got rank {x.ndim}")
    wsum = _channel_window_sum(x * x, cfg.n)
    base = cfg.k + (cfg.alpha / cfg.n) * wsum
    out = x * base ** (-cfg.beta)
    return out, (x, base, cfg)


def lrn_backward(cache, grad_out):
    x, base, cfg = cache
    p = base ** (-cfg.beta)
    inner = _channel_window_sum(grad_out * x * base ** (-cfg.beta - 1.0), cfg.n)
    return grad_out * p - (2.0 * cfg.alpha * cfg.beta / cfg.n) * x * inner


def fc_forward(x, weights: Parameter, bias: Parameter):
    """Affine map W.x + b for [d] or [b,d] inputs."""
    xb = x[None] if x.ndim == 1 else x
    if xb.ndim != 2:
        raise ShapeError(f"fc needs rank-1 or rank-2 input, got rank {x.ndim}")
    out_dim, d = weights.value.shape
    if xb.shape[1] != d:
        raise ShapeError(f"fc input extent {xb.shape[1]} does not match weights [{out_dim},{d}]")
    out = xb @ weights.value.T + bias.value
    cache = (xb, weights, bias, x.ndim == 1)
    return (out[0] if x.ndim == 1 else out), cache


def fc_backward(cache, grad_out, need_input_grad=True):
    xb, weights, bias, single = cache
    gb = grad_out[None] if single else grad_out
    weights.grad += gb.T @ xb
    bias.grad += gb.sum(axis=0)
    if not need_input_grad:
        return None
    grad_in = gb @ weights.value
    return grad_in[0] if single else grad_in


def dropout_forward(x, p: float, mode: str, rng=None):
    """Inverted dropout: train mode zeroes units with probability p and scales
    survivors by 1/(1-p); eval mode is the exact identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0,1), got {p}")
    if mode == "eval":
        return x, DropoutState(p, None)
    if mode != "train":
        raise ConfigError(f"unknown dropout mode '{mode}'")
    if rng is None:
        raise StateError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) * (1.0 / (1.0 - p))
    return x * mask, DropoutState(p, mask)


def dropout_backward(state: DropoutState, grad_out):
    if state.mask is None:
        return grad_out
    return grad_out * state.mask


def softmax(logits):
    """Max-shifted softmax along the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_xent(logits, label: int):
    """Softmax cross-entropy of one logit row: (loss, probs, grad_logits)."""
    if logits.ndim != 1:
        raise ShapeError(f"softmax_xent needs a rank-1 logit row, got rank {logits.ndim}")
    n = logits.shape[0]
    if not 0 <= label < n:
        raise RangeError(f"label {label} out of range for {n} classes")
    probs = softmax(logits)
    loss = -float(np.log(probs[label]))
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, probs, grad


def softmax_xent_batch(logits, labels):
    """Mean softmax cross-entropy over a batch: grad carries the 1/b factor,
    so accumulated parameter gradients come out as batch means."""
    if logits.ndim != 2:
        raise ShapeError(f"expected [b,n] logits, got rank {logits.ndim}")
    b, n = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= n:
        raise RangeError(f"labels outside [0, {n})")
    probs = softmax(logits)
    loss = -float(np.mean(np.log(probs[np.arange(b), labels])))
    grad = probs.copy()
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    return loss, probs, grad


def finite_difference_gradient(f, x, eps=1e-3):
    """Central-difference gradient of a scalar function, computed in 64-bit.

    f must be pure and deterministic; it receives float64 tensors.
    """
    x64 = np.asarray(x, dtype=np.float64).copy()
    grad = np.zeros_like(x64)
    for i in range(x64.size):
        orig = x64.flat[i]
        x64.flat[i] = orig + eps
        fp = float(f(x64))
        x64.flat[i] = orig - eps
        fm = float(f(x64))
        x64.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2.0 * eps)
    return grad
