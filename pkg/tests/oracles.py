"""Independent reference computations for the test suite.

Nothing here calls into the package's numeric code paths.
"""

import numpy as np


def jacobi_eigvalsh(s, tol=1e-15, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by classical two-sided Jacobi rotations."""
    a = np.array(s, dtype=float)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * max(np.linalg.norm(a), 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                j = np.eye(n)
                j[p, p] = j[q, q] = c
                j[p, q] = sn
                j[q, p] = -sn
                a = j.T @ a @ j
    return np.sort(np.diag(a))[::-1]


def singular_values_oracle(a):
    """sqrt of the eigenvalues of the smaller Gram matrix, descending."""
    a = np.asarray(a, dtype=float)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    return np.sqrt(np.clip(jacobi_eigvalsh(gram), 0.0, None))


def householder_orthogonal(n, rng, reflectors=4):
    q = np.eye(n)
    for _ in range(reflectors):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        q = q @ (np.eye(n) - 2.0 * np.outer(v, v))
    return q


def central_difference(f, x, eps=1e-6):
    """Entrywise central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def rel_error(analytic, numeric, floor=1e-2):
    """Largest entrywise relative error.

    Each entry is measured relative to its own magnitude, floored at
    ``floor`` times the largest numeric entry so that entries near zero are
    not judged against finite-difference rounding noise.
    """
    a, b = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.abs(b).max(initial=0.0), np.abs(a).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor * scale)
    return float(np.max(np.abs(a - b) / denom))
