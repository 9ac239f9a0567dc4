"""Direct-loop reference implementations used as test oracles.

Deliberately naive: no vectorization beyond scalar arithmetic, so they share
no code path with :mod:`sfconv.nn.ops`.
"""

from __future__ import annotations

import numpy as np

from .ops import ConvConfig


def matmul_reference(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def conv2d_reference(x, weight, bias, cfg: ConvConfig) -> np.ndarray:
    x, weight = np.asarray(x, dtype=float), np.asarray(weight, dtype=float)
    bsz, c_in, h, w = x.shape
    (sh, sw), (ph, pw) = cfg.strides, cfg.paddings
    ho, wo = cfg.output_hw(h, w)
    out = np.zeros((bsz, cfg.out_channels, ho, wo))
    for n in range(bsz):
        for o in range(cfg.out_channels):
            for y in range(ho):
                for xo in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(c_in):
                        for i in range(cfg.kernel_h):
                            for j in range(cfg.kernel_w):
                                r = y * sh + i - ph
                                s = xo * sw + j - pw
                                if 0 <= r < h and 0 <= s < w:
                                    acc += weight[o, c, i, j] * x[n, c, r, s]
                    out[n, o, y, xo] = acc
    return out
