"""Factorized k x k convolution realized as two rank-r 1-D convolutions.

Stage 1 applies ``q`` (r filters of shape c_in x 1 x k, horizontal), stage 2
applies ``p`` (c_out filters of shape r x k x 1, vertical).  Horizontal
stride/padding belong to stage 1 and vertical stride/padding to stage 2, so
the output geometry matches the emulated k x k convolution exactly.

The weight matrices seen by the spectral regularizer are

* ``matrix_p``: (c_out*k) x r, row index (o, i) over output channel and
  vertical tap;
* ``matrix_q``: r x (c_in*k), column index (c, j) over input channel and
  horizontal tap;

and their product is the emulated kernel laid out as (c_out*k) x (c_in*k).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .nn.ops import ConvConfig, Gradient, conv2d_backward, conv2d_forward
from .tensor import ArrayLike, ShapeError, as_array

DEFAULT_RANK = 10


@dataclass(frozen=True)
class FactorizedFilter:
    q_filters: np.ndarray  # r x c_in x 1 x k
    p_filters: np.ndarray  # c_out x r x k x 1
    bias: Optional[np.ndarray]
    cfg: ConvConfig  # the emulated k x k convolution

    def __post_init__(self):
        q, p = np.asarray(self.q_filters), np.asarray(self.p_filters)
        cfg = self.cfg
        if cfg.kernel_h != cfg.kernel_w:
            raise ShapeError(f"factorized layers emulate square kernels, got {cfg.kernel_h}x{cfg.kernel_w}")
        k = cfg.kernel_h
        if q.ndim != 4 or q.shape[1:] != (cfg.in_channels, 1, k):
            raise ShapeError(f"q_filters shape {q.shape} != (r, {cfg.in_channels}, 1, {k})")
        if p.ndim != 4 or p.shape[0] != cfg.out_channels or p.shape[2:] != (k, 1):
            raise ShapeError(f"p_filters shape {p.shape} != ({cfg.out_channels}, r, {k}, 1)")
        if p.shape[1] != q.shape[0]:
            raise ShapeError(f"rank mismatch between stages: q has {q.shape[0]}, p has {p.shape[1]}")
        if self.bias is not None and np.shape(self.bias) != (cfg.out_channels,):
            raise ShapeError(f"bias shape {np.shape(self.bias)} != ({cfg.out_channels},)")

    @property
    def rank(self) -> int:
        return self.q_filters.shape[0]

    @property
    def k(self) -> int:
        return self.cfg.kernel_h

    @property
    def compresses(self) -> bool:
        return self.rank < self.k * min(self.cfg.in_channels, self.cfg.out_channels)

    def num_params(self, include_bias: bool = True) -> int:
        n = self.q_filters.size + self.p_filters.size
        if include_bias and self.bias is not None:
            n += self.bias.size
        return n

    def with_params(self, q=None, p=None, bias=None) -> "FactorizedFilter":
        return replace(
            self,
            q_filters=self.q_filters if q is None else q,
            p_filters=self.p_filters if p is None else p,
            bias=self.bias if bias is None else bias,
        )


def stage_configs(f: FactorizedFilter) -> tuple[ConvConfig, ConvConfig]:
    c = f.cfg
    (sh, sw), (ph, pw) = c.strides, c.paddings
    first = ConvConfig(c.in_channels, f.rank, 1, f.k, stride=(1, sw), padding=(0, pw))
    second = ConvConfig(f.rank, c.out_channels, f.k, 1, stride=(sh, 1), padding=(ph, 0))
    return first, second


def sfconv_forward(x: ArrayLike, f: FactorizedFilter):
    x = as_array(x)
    if x.ndim != 4 or x.shape[1] != f.cfg.in_channels:
        raise ShapeError(f"input shape {x.shape} incompatible with c_in={f.cfg.in_channels}")
    first, second = stage_configs(f)
    mid, cache1 = conv2d_forward(x, f.q_filters, None, first)
    out, cache2 = conv2d_forward(mid, f.p_filters, f.bias, second)
    return out, (cache1, cache2)


def sfconv_backward(upstream: ArrayLike, cache) -> Gradient:
    cache1, cache2 = cache
    g2 = conv2d_backward(upstream, cache2)
    g1 = conv2d_backward(g2.input, cache1)
    params = {"q": g1.params["weight"], "p": g2.params["weight"]}
    if "bias" in g2.params:
        params["bias"] = g2.params["bias"]
    return Gradient(input=g1.input, params=params)


def init_factorized(c_in: int, c_out: int, k: int, r: int = DEFAULT_RANK, seed=0, *,
                    stride: int = 1, padding: int | None = None, bias: bool = True,
                    rng: np.random.Generator | None = None) -> FactorizedFilter:
    """He-style per-stage Gaussian initialization from a seeded generator.

    ``padding`` defaults to ``k // 2`` (size-preserving at stride 1).
    """
    if min(c_in, c_out, k, r) < 1:
        raise ValueError("c_in, c_out, k and r must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    q = rng.normal(0.0, np.sqrt(2.0 / (c_in * k)), size=(r, c_in, 1, k))
    p = rng.normal(0.0, np.sqrt(2.0 / (r * k)), size=(c_out, r, k, 1))
    cfg = ConvConfig.square(c_in, c_out, k, stride, k // 2 if padding is None else padding)
    return FactorizedFilter(q, p, np.zeros(c_out) if bias else None, cfg)


@dataclass(frozen=True)
class SpectrumView:
    matrix_p: np.ndarray  # (c_out*k) x r
    matrix_q: np.ndarray  # r x (c_in*k)


def p_to_matrix(p_filters: np.ndarray) -> np.ndarray:
    c_out, r, k, _ = p_filters.shape
    return np.ascontiguousarray(p_filters[..., 0].transpose(0, 2, 1)).reshape(c_out * k, r)


def matrix_to_p(matrix: np.ndarray, c_out: int, k: int) -> np.ndarray:
    r = matrix.shape[1]
    return np.ascontiguousarray(matrix.reshape(c_out, k, r).transpose(0, 2, 1))[..., None]


def q_to_matrix(q_filters: np.ndarray) -> np.ndarray:
    r = q_filters.shape[0]
    return q_filters.reshape(r, -1)


def matrix_to_q(matrix: np.ndarray, c_in: int, k: int) -> np.ndarray:
    return matrix.reshape(matrix.shape[0], c_in, 1, k)


def spectrum_view(f: FactorizedFilter) -> SpectrumView:
    return SpectrumView(matrix_p=p_to_matrix(f.p_filters), matrix_q=q_to_matrix(f.q_filters))


def emulated_weight(f: FactorizedFilter) -> np.ndarray:
    """The full c_out x c_in x k x k kernel that the two stages compose to."""
    view = spectrum_view(f)
    k, c = f.k, f.cfg
    w = (view.matrix_p @ view.matrix_q).reshape(c.out_channels, k, c.in_channels, k)
    return w.transpose(0, 2, 1, 3)
