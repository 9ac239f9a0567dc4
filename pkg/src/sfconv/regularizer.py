"""Singular-value equalization penalty.

Each factorized layer contributes KL(s_p || uniform) + KL(s_q || uniform),
where s is the spectrum of the layer's weight matrix normalized to sum to one.
The network penalty is the sum over layers; the training objective adds it to
the task loss with weight ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linalg
from .factorized import (
    FactorizedFilter,
    matrix_to_p,
    matrix_to_q,
    spectrum_view,
)


class DeadLayerError(ValueError):
    """Raised when a weight matrix has an all-zero spectrum."""


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray  # normalized, sums to one
    raw: np.ndarray  # singular values as computed, descending

    @property
    def length(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class UniformReference:
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("uniform reference needs length >= 1")

    @property
    def values(self) -> np.ndarray:
        return np.full(self.length, 1.0 / self.length)


@dataclass(frozen=True)
class RegularizerConfig:
    lam: float = 0.0
    clamp_floor: float = linalg.CLAMP_FLOOR

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


@dataclass
class LossReport:
    task_loss: float
    kl_term: float
    lam: float
    total: float
    breakdown: list = field(default_factory=list)  # (layer id, kl_p, kl_q)

    def row(self, step: int) -> dict:
        return {"step": step, "task_loss": self.task_loss, "kl_term": self.kl_term,
                "lambda": self.lam, "total": self.total}


def normalize_spectrum(sigma, floor: float = linalg.CLAMP_FLOOR) -> Spectrum:
    raw = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if raw.size == 0:
        raise ValueError("empty spectrum")
    if np.any(raw < 0):
        raise ValueError("singular values must be non-negative")
    top = raw.max()
    if top <= 0:
        raise DeadLayerError("all singular values are zero (dead layer)")
    clamped = np.maximum(raw, floor * top)
    return Spectrum(values=clamped / clamped.sum(), raw=raw)


def kl_to_uniform(s: Spectrum) -> float:
    """KL divergence of a normalized spectrum from the uniform distribution (nats)."""
    v = s.values
    nz = v > 0
    return max(float(np.sum(v[nz] * np.log(v[nz] * v.size))), 0.0)


def matrix_kl(matrix, floor: float = linalg.CLAMP_FLOOR) -> float:
    return kl_to_uniform(normalize_spectrum(linalg.svd(matrix).sigma, floor))


def matrix_kl_gradient(matrix, floor: float = linalg.CLAMP_FLOOR) -> tuple[float, np.ndarray]:
    """KL of ``matrix``'s spectrum and its gradient w.r.t. every entry.

    With T the sum of the (clamped) singular values and s = sigma / T,
    dKL/dsigma_i = (ln(s_i * L) - KL) / T, and dsigma_i/dA = u_i v_i^T.
    """
    res = linalg.svd(matrix)
    spectrum = normalize_spectrum(res.sigma, floor)
    kl = kl_to_uniform(spectrum)
    if linalg.count_ties(res.sigma):
        linalg.diagnostics.tie_events += 1
    s = spectrum.values
    total = np.maximum(res.sigma, floor * res.sigma[0]).sum()
    d_sigma = (np.log(s * s.size) - kl) / total
    grad = (res.u * d_sigma) @ res.v.T
    return kl, grad


def layer_kl(f: FactorizedFilter, floor: float = linalg.CLAMP_FLOOR) -> tuple[float, float]:
    view = spectrum_view(f)
    return matrix_kl(view.matrix_p, floor), matrix_kl(view.matrix_q, floor)


def network_kl(layers: Sequence[FactorizedFilter], floor: float = linalg.CLAMP_FLOOR):
    """Sum of per-layer KL terms, accumulated in layer order."""
    total = 0.0
    breakdown = []
    for idx, f in enumerate(layers):
        kp, kq = layer_kl(f, floor)
        breakdown.append((idx, kp, kq))
        total += kp + kq
    return total, breakdown


def kl_gradient(f: FactorizedFilter, floor: float = linalg.CLAMP_FLOOR) -> dict:
    """Gradient of ``kl_p + kl_q`` w.r.t. the layer's ``p`` and ``q`` filters."""
    view = spectrum_view(f)
    kp, gp = matrix_kl_gradient(view.matrix_p, floor)
    kq, gq = matrix_kl_gradient(view.matrix_q, floor)
    c = f.cfg
    return {
        "p": matrix_to_p(gp, c.out_channels, f.k),
        "q": matrix_to_q(gq, c.in_channels, f.k),
        "kl_p": kp,
        "kl_q": kq,
    }


def combine_loss(task_loss: float, grads_task: dict, layers: dict, cfg: RegularizerConfig):
    """Total objective ``task_loss + lam * L_KL`` and the combined gradients.

    ``layers`` maps a layer name to its :class:`FactorizedFilter`; the KL
    gradient lands on ``<name>.p`` / ``<name>.q`` only.  With ``lam == 0``
    the task gradients are returned unchanged.
    """
    grads = dict(grads_task)
    kl_total = 0.0
    breakdown = []
    for name, f in layers.items():
        if cfg.lam > 0:
            g = kl_gradient(f, cfg.clamp_floor)
            kp, kq = g["kl_p"], g["kl_q"]
            for part in ("p", "q"):
                key = f"{name}.{part}"
                grads[key] = grads[key] + cfg.lam * g[part] if key in grads else cfg.lam * g[part]
        else:
            kp, kq = layer_kl(f, cfg.clamp_floor)
        breakdown.append((name, kp, kq))
        kl_total += kp + kq
    report = LossReport(task_loss=float(task_loss), kl_term=kl_total, lam=cfg.lam,
                        total=float(task_loss) + cfg.lam * kl_total, breakdown=breakdown)
    return report, grads


def max_kl(length: int) -> float:
    return math.log(length)
