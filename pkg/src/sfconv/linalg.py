"""Thin SVD by one-sided Jacobi rotations, and singular-value gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ArrayLike, DomainError, ShapeError, as_array

TIE_TOLERANCE = 1e-8
CLAMP_FLOOR = 1e-12
OFF_DIAGONAL_TOL = 1e-14
MAX_SWEEPS = 100


@dataclass
class Diagnostics:
    """Counters for numerically delicate events seen by this module."""

    tie_events: int = 0
    unconverged: int = 0

    def reset(self) -> None:
        self.tie_events = 0
        self.unconverged = 0


diagnostics = Diagnostics()


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # m x t, orthonormal columns
    sigma: np.ndarray  # t, descending
    v: np.ndarray  # n x t, orthonormal columns
    sweeps: int = field(default=0, compare=False)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Orthogonalize the columns of a tall matrix (m >= n) in place.

    Returns the rotated matrix ``a @ v`` and the accumulated rotation ``v``.
    """
    n = a.shape[1]
    v = np.eye(n)
    fro2 = float(np.sum(a * a))
    if fro2 == 0.0 or n == 1:
        return a, v, 0
    target = OFF_DIAGONAL_TOL * fro2
    sweeps = 0
    while sweeps < MAX_SWEEPS:
        gram = a.T @ a
        off = np.sqrt(np.sum(np.triu(gram, 1) ** 2))
        if off <= target:
            break
        sweeps += 1
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai, aj = a[:, i], a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if abs(gamma) <= 1e-15 * np.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ai - s * aj
                a[:, j] = s * ai + c * aj
                a[:, i] = new_i
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
    else:
        gram = a.T @ a
        if np.sqrt(np.sum(np.triu(gram, 1) ** 2)) > target:
            diagnostics.unconverged += 1
    return a, v, sweeps


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace unfilled columns of ``u`` by an orthonormal completion."""
    m, t = u.shape
    basis = [u[:, k] for k in range(t) if filled[k]]
    candidates = iter(np.eye(m))
    for k in range(t):
        if filled[k]:
            continue
        for e in candidates:
            w = e.copy()
            for _ in range(2):
                for b in basis:
                    w -= (b @ w) * b
            nw = np.linalg.norm(w)
            if nw > 1e-6:
                u[:, k] = w / nw
                basis.append(u[:, k])
                break
    return u


def svd(a: ArrayLike) -> SvdResult:
    """Thin singular value decomposition ``a = u @ diag(sigma) @ v.T``.

    Singular values come back in descending order.  Each left singular
    vector is signed so its largest-magnitude component is non-negative.
    """
    a = as_array(a)
    if a.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("svd input contains non-finite entries")
    m, n = a.shape
    transposed = m < n
    work = np.array(a.T if transposed else a, dtype=np.float64, order="F")
    rotated, v, sweeps = _jacobi_tall(work)

    sigma = np.sqrt(np.sum(rotated * rotated, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    rotated = rotated[:, order]
    v = v[:, order]

    # columns at rounding level carry no reliable direction
    filled = sigma > max(m, n) * np.finfo(np.float64).eps * sigma[0]
    u = np.zeros_like(rotated)
    u[:, filled] = rotated[:, filled] / sigma[filled]
    if not filled.all():
        sigma = np.where(filled, sigma, 0.0)
        u = _complete_basis(u, filled)

    if transposed:
        u, v = v, u
    rows = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[rows, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u = u * signs
    v = v * signs
    return SvdResult(u=u, sigma=sigma, v=v, sweeps=sweeps)


def singular_values(a: ArrayLike) -> np.ndarray:
    return svd(a).sigma


def has_tie(sigma: np.ndarray, i: int, tol: float = TIE_TOLERANCE) -> bool:
    if sigma.size == 0 or sigma[0] == 0:
        return False
    gap = tol * sigma[0]
    return bool((i > 0 and sigma[i - 1] - sigma[i] < gap)
                or (i + 1 < sigma.size and sigma[i] - sigma[i + 1] < gap))


def count_ties(sigma: np.ndarray, tol: float = TIE_TOLERANCE) -> int:
    if sigma.size < 2 or sigma[0] == 0:
        return 0
    return int(np.sum(np.diff(sigma) > -tol * sigma[0]))


def singular_value_gradient(a: ArrayLike, i: int, result: SvdResult | None = None) -> np.ndarray:
    """Gradient of the i-th singular value with respect to every entry of ``a``.

    This is the outer product ``u_i v_i^T``.  When ``sigma_i`` is tied with a
    neighbour the value is still returned for the computed basis and the tie
    is counted in :data:`diagnostics`.
    """
    res = result if result is not None else svd(a)
    if not 0 <= i < res.sigma.size:
        raise IndexError(f"singular value index {i} out of range 0..{res.sigma.size - 1}")
    if has_tie(res.sigma, i):
        diagnostics.tie_events += 1
    return np.outer(res.u[:, i], res.v[:, i])


def clamp_spectrum(sigma: np.ndarray, floor: float = CLAMP_FLOOR) -> np.ndarray:
    """Lift values below ``floor * sigma[0]`` to that floor."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] <= 0:
        return sigma.copy()
    return np.maximum(sigma, floor * sigma[0])
