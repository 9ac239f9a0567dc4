"""Parameter, FLOP and throughput accounting.

FLOP convention: a multiply-accumulate is 2 operations; bias adds and
activations cost 1 per output element; 2x2 max pooling costs 3 comparisons
per output element.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn.ops import ConvConfig


@dataclass(frozen=True)
class ComplexityReport:
    params: int
    flops: int
    fps: float | None
    input_shape: tuple[int, ...]
    batch_size: int
    threads: int = 1

    def as_row(self) -> dict:
        return {
            "params": self.params,
            "flops": self.flops,
            "fps": "" if self.fps is None else f"{self.fps:.3f}",
            "input_shape": "x".join(str(d) for d in self.input_shape),
            "batch_size": self.batch_size,
            "threads": self.threads,
        }

    def describe(self) -> str:
        lines = [
            f"input shape : {'x'.join(str(d) for d in self.input_shape)}",
            f"parameters  : {self.params:,}",
            f"FLOPs/image : {self.flops:,}",
        ]
        if self.fps is not None:
            lines.append(f"FPS         : {self.fps:.2f} (batch {self.batch_size}, {self.threads} thread)")
        return "\n".join(lines)


# --- closed-form per-layer costs ---------------------------------------------

def conv_params(cfg: ConvConfig, bias: bool = True) -> int:
    n = cfg.out_channels * cfg.in_channels * cfg.kernel_h * cfg.kernel_w
    return n + (cfg.out_channels if bias else 0)


def sfconv_params(c_in: int, c_out: int, k: int, r: int, bias: bool = True) -> int:
    return k * r * (c_in + c_out) + (c_out if bias else 0)


def conv_flops(cfg: ConvConfig, h: int, w: int, bias: bool = True) -> int:
    ho, wo = cfg.output_hw(h, w)
    macs = cfg.kernel_h * cfg.kernel_w * cfg.in_channels * cfg.out_channels * ho * wo
    return 2 * macs + (cfg.out_channels * ho * wo if bias else 0)


def sfconv_stage_flops(cfg: ConvConfig, r: int, h: int, w: int, bias: bool = True) -> tuple[int, int]:
    """FLOPs of the horizontal and vertical stages of a factorized ``cfg``."""
    k = cfg.kernel_h
    (sh, sw), (ph, pw) = cfg.strides, cfg.paddings
    first = ConvConfig(cfg.in_channels, r, 1, k, stride=(1, sw), padding=(0, pw))
    second = ConvConfig(r, cfg.out_channels, k, 1, stride=(sh, 1), padding=(ph, 0))
    h1, w1 = first.output_hw(h, w)
    return conv_flops(first, h, w, bias=False), conv_flops(second, h1, w1, bias=bias)


def sfconv_flops(cfg: ConvConfig, r: int, h: int, w: int, bias: bool = True) -> int:
    return sum(sfconv_stage_flops(cfg, r, h, w, bias))


def rank_threshold(cfg: ConvConfig, h: int, w: int) -> float:
    """Largest rank (exclusive) for which the factorized layer is cheaper.

    Bias cost is identical on both sides and cancels.  At stride 1 with
    size-preserving padding this is k*c_in*c_out / (c_in + c_out).
    """
    k = cfg.kernel_h
    (sh, sw), (ph, pw) = cfg.strides, cfg.paddings
    ho, wo = cfg.output_hw(h, w)
    stage1_pixels = h * ((w + 2 * pw - k) // sw + 1)
    full = k * k * cfg.in_channels * cfg.out_channels * ho * wo
    per_rank = k * cfg.in_channels * stage1_pixels + k * cfg.out_channels * ho * wo
    return full / per_rank


def dense_flops(n_in: int, n_out: int, bias: bool = True) -> int:
    return 2 * n_in * n_out + (n_out if bias else 0)


def activation_flops(n_elements: int) -> int:
    return int(n_elements)


def maxpool_flops(n_out_elements: int, k: int = 2) -> int:
    return (k * k - 1) * int(n_out_elements)


# --- model-level --------------------------------------------------------------

def count_params(model) -> int:
    """Learnable scalar count of a model, a layer, or a list of either."""
    if model is None:
        return 0
    if isinstance(model, (list, tuple)):
        return sum(count_params(m) for m in model)
    return int(sum(np.asarray(p).size for p in model.params.values()))


def count_flops(model, input_shape: Sequence[int]) -> int:
    """Forward FLOPs for one image of ``input_shape`` = (c, h, w) or (b, c, h, w).

    ``model`` is anything with ``flops(shape) -> (flops, out_shape)``, or a list
    of such layers applied in sequence.
    """
    shape = tuple(int(d) for d in input_shape)
    if len(shape) == 4:
        shape = shape[1:]
    if isinstance(model, (list, tuple)):
        total = 0
        for layer in model:
            f, shape = layer.flops(shape)
            total += f
        return total
    return model.flops(shape)[0]


def _threads() -> int:
    try:
        from threadpoolctl import threadpool_info
    except ImportError:  # pragma: no cover
        return 1
    nums = [i.get("num_threads", 1) for i in threadpool_info()]
    return max(nums) if nums else 1


def measure_fps(model, input_shape: Sequence[int], trials: int = 50, warmup: int = 10,
                seed: int = 0) -> float:
    """Median forward passes per second (images/s) over ``trials`` timed batches.

    Runs with BLAS pinned to one thread.
    """
    if trials < 3:
        raise ValueError("measure_fps needs at least 3 trials")
    from threadpoolctl import threadpool_limits

    shape = tuple(int(d) for d in input_shape)
    if len(shape) == 3:
        shape = (1,) + shape
    x = np.random.default_rng(seed).standard_normal(shape)
    rates = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            model.forward(x, train=False)
        for _ in range(trials):
            t0 = time.perf_counter()
            model.forward(x, train=False)
            dt = time.perf_counter() - t0
            rates.append(shape[0] / max(dt, 1e-12))
    return float(statistics.median(rates))


def report(model, input_shape: Sequence[int], *, trials: int = 50, warmup: int = 10,
           measure: bool = True) -> ComplexityReport:
    shape = tuple(int(d) for d in input_shape)
    if len(shape) == 3:
        shape = (1,) + shape
    fps = measure_fps(model, shape, trials, warmup) if measure else None
    return ComplexityReport(params=count_params(model), flops=count_flops(model, shape),
                            fps=fps, input_shape=shape, batch_size=shape[0], threads=1)
