"""Shared dense linear algebra with one jitter policy.

All positive (semi)definite factorizations in the package go through
:func:`cholesky` so the recovery behaviour is uniform: symmetrize, try,
add one scaled-identity jitter, try again, then fail hard. Nothing in
this module ever forms an explicit matrix inverse.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm as _scipy_expm

from .errors import NotPositiveDefinite, ValidationError

# Jitter added on a failed factorization: JITTER_FACTOR * trace(A)/dim.
JITTER_FACTOR = 1e-10


def _as_square(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be a square 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor with the package jitter policy.

    The input is symmetrized as (A + A to the T)/2 before factorizing.
    On failure, JITTER_FACTOR * trace/dim is added to the diagonal and
    the factorization is retried once; a second failure raises
    :class:`NotPositiveDefinite`.
    """
    a = _as_square(a, "matrix")
    sym = 0.5 * (a + a.T)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    dim = sym.shape[0]
    jitter = JITTER_FACTOR * max(np.trace(sym) / dim, 0.0)
    try:
        return np.linalg.cholesky(sym + jitter * np.eye(dim))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            f"matrix of dim {dim} is not positive definite (jitter {jitter:.3e} did not help)"
        ) from None


def matrix_exponential(q: np.ndarray, t: float) -> np.ndarray:
    """exp(t*Q) with analytic fast paths for Matern companion blocks.

    1x1 blocks use a scalar exponential. 2x2 companion matrices with a
    repeated eigenvalue (the Matern nu=3/2 transition block) use the
    closed form exp(lam*t) * ((1 - lam*t) I + t Q). Everything else goes
    through scipy's scaling-and-squaring expm.
    """
    q = _as_square(q, "Q")
    if not np.isfinite(t):
        raise ValidationError("t must be finite")
    dim = q.shape[0]
    if dim == 1:
        return np.array([[np.exp(t * q[0, 0])]])
    if dim == 2 and q[0, 0] == 0.0 and q[0, 1] == 1.0:
        tr = q[1, 1]
        disc = tr * tr + 4.0 * q[1, 0]  # tr^2 - 4 det for a companion block
        if abs(disc) <= 1e-12 * max(1.0, tr * tr):
            lam = 0.5 * tr
            return np.exp(lam * t) * ((1.0 - lam * t) * np.eye(2) + t * q)
    return _scipy_expm(t * q)


def solve_lyapunov(q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve Q S + S Q^T + D = 0 for S, requiring a stable Q.

    Q must be Hurwitz (all eigenvalues with negative real part), which is
    what makes the continuous Lyapunov equation uniquely solvable and the
    solution the stationary covariance of the corresponding linear SDE.
    The output is symmetrized; with a symmetric PSD D it is PSD up to
    rounding.
    """
    q = _as_square(q, "Q")
    d = _as_square(d, "D")
    if q.shape != d.shape:
        raise ValidationError(f"Q and D shapes differ: {q.shape} vs {d.shape}")
    eigs = np.linalg.eigvals(q)
    if np.any(eigs.real >= 0):
        raise ValidationError(
            f"Q must be stable (all eigenvalue real parts < 0), got max real part {eigs.real.max():.3e}"
        )
    from scipy.linalg import solve_continuous_lyapunov

    s = solve_continuous_lyapunov(q, -d)
    return 0.5 * (s + s.T)


def mvn_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log density of a multivariate normal via Cholesky solves."""
    y = np.asarray(y, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    if y.shape != mean.shape:
        raise ValidationError(f"y and mean lengths differ: {y.shape} vs {mean.shape}")
    cov = _as_square(cov, "cov")
    if cov.shape[0] != y.size:
        raise ValidationError(f"cov dim {cov.shape[0]} does not match y length {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("y contains non-finite entries")
    factor = cholesky(cov)
    from scipy.linalg import solve_triangular

    z = solve_triangular(factor, y - mean, lower=True)
    half_logdet = np.sum(np.log(np.diag(factor)))
    return float(-0.5 * (y.size * np.log(2.0 * np.pi) + z @ z) - half_logdet)
