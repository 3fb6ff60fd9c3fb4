"""Dense-covariance reference implementation.

Everything here rebuilds the model predictions the slow, transparent
way: assemble the full Gram matrix entry by entry from the kernel and
condition with dense solves. Quadratic in the number of observations by
design; it exists to cross-check the O(N) filter and to serve the
`dense` prediction engine on small problems, not to be fast.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from . import numerics
from .errors import ValidationError
from .filter_smoother import MultiSeriesDataset, check_tau2
from .kernels import CouplingMatrix, MaternHyper, cross_covariance

Point = tuple[int, float]


def _check_points(points, p: int) -> list[Point]:
    out = []
    for entry in points:
        j, t = entry
        j = int(j)
        t = float(t)
        if not 0 <= j < p:
            raise ValidationError(f"series index {j} out of range for p={p}")
        if not np.isfinite(t):
            raise ValidationError(f"non-finite time {t}")
        out.append((j, t))
    return out


def dense_gram(
    points, hypers: tuple[MaternHyper, ...], coupling: CouplingMatrix
) -> np.ndarray:
    """Gram matrix of the latent positions at (series, time) points."""
    hypers = tuple(hypers)
    pts = _check_points(points, len(hypers))
    n = len(pts)
    g = np.empty((n, n))
    for a in range(n):
        ja, ta = pts[a]
        for b in range(a, n):
            jb, tb = pts[b]
            val = cross_covariance(ta, tb, ja, jb, hypers, coupling)
            g[a, b] = val
            g[b, a] = val
    return g


def _observed_points(data: MultiSeriesDataset) -> tuple[list[Point], np.ndarray]:
    """Observed entries flattened time-major, then by series index."""
    rows_t, rows_j = np.nonzero(data.mask)
    pts = [(int(j), float(data.times[k])) for k, j in zip(rows_t, rows_j)]
    y = data.values[rows_t, rows_j]
    return pts, y


def dense_loglik(
    data: MultiSeriesDataset,
    hypers: tuple[MaternHyper, ...],
    coupling: CouplingMatrix,
    tau2,
) -> float:
    """Marginal log-likelihood via one dense multivariate normal."""
    hypers = tuple(hypers)
    if len(hypers) != data.n_series:
        raise ValidationError(
            f"{len(hypers)} hypers for {data.n_series} series"
        )
    tau2 = check_tau2(tau2, data.n_series)
    pts, y = _observed_points(data)
    if len(pts) == 0:
        return 0.0
    g = dense_gram(pts, hypers, coupling)
    g[np.diag_indices_from(g)] += np.array([tau2[j] for j, _ in pts])
    return numerics.mvn_logpdf(y, np.zeros(len(pts)), g)


def dense_posterior(
    data: MultiSeriesDataset,
    targets,
    hypers: tuple[MaternHyper, ...],
    coupling: CouplingMatrix,
    tau2,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance of target (series, time) points.

    Conditions the joint Gaussian of latent positions on the observed
    entries (with their noise variances on the Gram diagonal). Returns
    (means, latent variances); add tau2 of the target's series for the
    predictive variance of a new noisy observation.
    """
    hypers = tuple(hypers)
    if len(hypers) != data.n_series:
        raise ValidationError(f"{len(hypers)} hypers for {data.n_series} series")
    tau2 = check_tau2(tau2, data.n_series)
    tgt = _check_points(targets, len(hypers))
    pts, y = _observed_points(data)
    prior_var = np.array(
        [cross_covariance(t, t, j, j, hypers, coupling) for j, t in tgt]
    )
    if len(tgt) == 0:
        return np.zeros(0), np.zeros(0)
    if len(pts) == 0:
        return np.zeros(len(tgt)), prior_var
    g = dense_gram(pts, hypers, coupling)
    g[np.diag_indices_from(g)] += np.array([tau2[j] for j, _ in pts])
    cross = np.empty((len(pts), len(tgt)))
    for a, (ja, ta) in enumerate(pts):
        for b, (jb, tb) in enumerate(tgt):
            cross[a, b] = cross_covariance(ta, tb, ja, jb, hypers, coupling)
    chol = numerics.cholesky(g)
    alpha = solve_triangular(chol, y, lower=True, check_finite=False)
    beta = solve_triangular(chol, cross, lower=True, check_finite=False)
    means = beta.T @ alpha
    variances = prior_var - np.einsum("ab,ab->b", beta, beta)
    return means, np.maximum(variances, 0.0)
