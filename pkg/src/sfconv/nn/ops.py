"""Forward/backward passes for convolution, activations, pooling, dense layers and losses.

Every forward returns ``(output, cache)``; the matching backward consumes the
cache and never mutates it.  Convolution is cross-correlation with symmetric
zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor import ArrayLike, ShapeError, as_array

Pair = Union[int, Tuple[int, int]]

DICE_SMOOTH = 1.0


def _pair(v: Pair) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def out_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


@dataclass(frozen=True)
class ConvConfig:
    """Geometry of a 2-D convolution.

    ``stride`` and ``padding`` take an int (both axes) or an ``(h, w)`` pair.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: Pair = 1
    padding: Pair = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ValueError(f"channels and kernel extents must be positive: {self}")
        sh, sw = _pair(self.stride)
        ph, pw = _pair(self.padding)
        if sh < 1 or sw < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if ph < 0 or pw < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    @classmethod
    def square(cls, c_in: int, c_out: int, k: int, stride: int = 1, padding: int = 0) -> "ConvConfig":
        return cls(c_in, c_out, k, k, stride, padding)

    @property
    def strides(self) -> tuple[int, int]:
        return _pair(self.stride)

    @property
    def paddings(self) -> tuple[int, int]:
        return _pair(self.padding)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        (sh, sw), (ph, pw) = self.strides, self.paddings
        ho = out_extent(h, self.kernel_h, sh, ph)
        wo = out_extent(w, self.kernel_w, sw, pw)
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"non-positive output extent {(ho, wo)} for input {(h, w)} with {self}")
        return ho, wo


@dataclass
class Gradient:
    """Gradients of a scalar loss w.r.t. an op's input and its parameters."""

    input: Optional[np.ndarray]
    params: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


# --- convolution --------------------------------------------------------------

def _check_conv(x: np.ndarray, w: np.ndarray, cfg: ConvConfig, bias) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank-4 (b, c, h, w), got {x.shape}")
    if w.shape != cfg.weight_shape:
        raise ShapeError(f"weight shape {w.shape} does not match config {cfg.weight_shape}")
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, config expects {cfg.in_channels}")
    if bias is not None and np.shape(bias) != (cfg.out_channels,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({cfg.out_channels},)")


def _windows(xp: np.ndarray, cfg: ConvConfig, ho: int, wo: int) -> np.ndarray:
    sh, sw = cfg.strides
    win = sliding_window_view(xp, (cfg.kernel_h, cfg.kernel_w), axis=(2, 3))
    return win[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def conv2d_forward(x: ArrayLike, weight: ArrayLike, bias: ArrayLike | None, cfg: ConvConfig):
    x, w = as_array(x), as_array(weight)
    b = None if bias is None else as_array(bias)
    _check_conv(x, w, cfg, b)
    ph, pw = cfg.paddings
    ho, wo = cfg.output_hw(x.shape[2], x.shape[3])
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    # (b, c, ho, wo, kh, kw) -> (b, ho, wo, c*kh*kw)
    cols = _windows(xp, cfg, ho, wo).transpose(0, 2, 3, 1, 4, 5)
    cols = cols.reshape(x.shape[0] * ho * wo, -1)
    out = cols @ w.reshape(cfg.out_channels, -1).T
    out = out.reshape(x.shape[0], ho, wo, cfg.out_channels).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    out = np.ascontiguousarray(out)
    cache = (x.shape, cols, w, b is not None, cfg)
    return out, cache


def conv2d_backward(upstream: ArrayLike, cache) -> Gradient:
    in_shape, cols, w, has_bias, cfg = cache
    g = as_array(upstream)
    bsz, _, h, wd = in_shape
    ho, wo = cfg.output_hw(h, wd)
    if g.shape != (bsz, cfg.out_channels, ho, wo):
        raise ShapeError(f"upstream shape {g.shape} != forward output {(bsz, cfg.out_channels, ho, wo)}")
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, cfg.out_channels)
    dw = (g2.T @ cols).reshape(cfg.weight_shape)

    (sh, sw), (ph, pw) = cfg.strides, cfg.paddings
    dcols = (g2 @ w.reshape(cfg.out_channels, -1)).reshape(
        bsz, ho, wo, cfg.in_channels, cfg.kernel_h, cfg.kernel_w)
    dxp = np.zeros((bsz, cfg.in_channels, h + 2 * ph, wd + 2 * pw))
    for i in range(cfg.kernel_h):
        for j in range(cfg.kernel_w):
            dxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    dx = dxp[:, :, ph : ph + h, pw : pw + wd]
    params = {"weight": dw}
    if has_bias:
        params["bias"] = g.sum(axis=(0, 2, 3))
    return Gradient(input=np.ascontiguousarray(dx), params=params)


# --- activations --------------------------------------------------------------

def relu_forward(x: ArrayLike):
    x = as_array(x)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(upstream: ArrayLike, mask) -> Gradient:
    g = as_array(upstream)
    if g.shape != mask.shape:
        raise ShapeError(f"upstream shape {g.shape} != {mask.shape}")
    return Gradient(input=np.where(mask, g, 0.0))


def sigmoid_forward(x: ArrayLike):
    x = as_array(x)
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    y[~pos] = e / (1.0 + e)
    return y, y


def sigmoid_backward(upstream: ArrayLike, y) -> Gradient:
    return Gradient(input=as_array(upstream) * y * (1.0 - y))


# --- pooling / resampling -----------------------------------------------------

def maxpool2d_forward(x: ArrayLike):
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped."""
    x = as_array(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool input must be rank-4, got {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError(f"maxpool needs spatial extent >= 2, got {(h, w)}")
    blocks = x[:, :, : 2 * ho, : 2 * wo].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, ho, wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2d_backward(upstream: ArrayLike, cache) -> Gradient:
    shape, arg = cache
    g = as_array(upstream)
    b, c, h, w = shape
    ho, wo = h // 2, w // 2
    if g.shape != (b, c, ho, wo):
        raise ShapeError(f"upstream shape {g.shape} != {(b, c, ho, wo)}")
    blocks = np.zeros((b, c, ho, wo, 4))
    np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
    blocks = blocks.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
    dx = np.zeros(shape)
    dx[:, :, : 2 * ho, : 2 * wo] = blocks
    return Gradient(input=dx)


def upsample2x_forward(x: ArrayLike):
    """Nearest-neighbour 2x upsampling."""
    x = as_array(x)
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample2x_backward(upstream: ArrayLike, shape) -> Gradient:
    g = as_array(upstream)
    b, c, h, w = shape
    if g.shape != (b, c, 2 * h, 2 * w):
        raise ShapeError(f"upstream shape {g.shape} != {(b, c, 2 * h, 2 * w)}")
    return Gradient(input=g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))


# --- dense --------------------------------------------------------------------

def dense_forward(x: ArrayLike, weight: ArrayLike, bias: ArrayLike | None = None):
    """``y = x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    x, w = as_array(x), as_array(weight)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weight {w.shape}")
    y = x @ w.T
    if bias is not None:
        b = as_array(bias)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} != ({w.shape[0]},)")
        y = y + b
    return y, (x, w, bias is not None)


def dense_backward(upstream: ArrayLike, cache) -> Gradient:
    x, w, has_bias = cache
    g = as_array(upstream)
    if g.shape != (x.shape[0], w.shape[0]):
        raise ShapeError(f"upstream shape {g.shape} != {(x.shape[0], w.shape[0])}")
    params = {"weight": g.T @ x}
    if has_bias:
        params["bias"] = g.sum(axis=0)
    return Gradient(input=g @ w, params=params)


# --- losses -------------------------------------------------------------------

def softmax(logits: ArrayLike) -> np.ndarray:
    z = as_array(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: ArrayLike, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    z = as_array(logits)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if z.ndim != 2 or labels.shape[0] != z.shape[0]:
        raise ShapeError(f"logits {z.shape} incompatible with {labels.shape[0]} labels")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= z.shape[1]:
        raise ValueError(f"label out of range 0..{z.shape[1] - 1}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(logsum - shifted[rows, labels]))
    grad = softmax(z)
    grad[rows, labels] -= 1.0
    return loss, grad / z.shape[0]


def dice_coefficient(pred: ArrayLike, target: ArrayLike, smooth: float = DICE_SMOOTH) -> float:
    p, t = as_array(pred), as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred {p.shape} and target {t.shape} differ")
    return float((2.0 * np.sum(p * t) + smooth) / (np.sum(p) + np.sum(t) + smooth))


def dice_loss(pred: ArrayLike, target: ArrayLike, smooth: float = DICE_SMOOTH) -> tuple[float, np.ndarray]:
    """Soft Dice loss ``1 - dice`` over all elements, with its gradient w.r.t. ``pred``."""
    p, t = as_array(pred), as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred {p.shape} and target {t.shape} differ")
    num = 2.0 * np.sum(p * t) + smooth
    den = np.sum(p) + np.sum(t) + smooth
    loss = 1.0 - num / den
    grad = -(2.0 * t * den - num) / (den * den)
    return float(loss), grad
