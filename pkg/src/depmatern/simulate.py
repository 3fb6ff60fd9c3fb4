"""Exact simulation from the joint model, plus the synthetic benchmark.

Path sampling uses the exact discretization: draw the stationary state,
then propagate with the per-gap transition and per-gap process noise.
No Euler steps are involved, so samples are draws from the model at any
spacing.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .errors import NotPositiveDefinite, ValidationError
from .filter_smoother import MultiSeriesDataset, check_tau2
from .ssm import JointStateSpaceModel, discretize


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(int(rng)))


def _gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """Matrix B with B B^T = cov for sampling; tolerates rank deficiency.

    Cholesky with the standard jitter policy first; if the matrix is
    genuinely singular (dt -> 0 gaps, rank-limited coupling), fall back
    to an eigendecomposition with eigenvalues below 1e-12 * trace
    truncated to zero.
    """
    try:
        return numerics.cholesky(cov)
    except NotPositiveDefinite:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        floor = 1e-12 * max(float(np.trace(cov)), 0.0)
        vals = np.where(vals < max(floor, 0.0), 0.0, vals)
        return vecs * np.sqrt(vals)


def sample_latent(
    model: JointStateSpaceModel, times, rng
) -> np.ndarray:
    """Draw one latent state trajectory, shape (n_times, state_dim)."""
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise ValidationError("times must be non-empty")
    if not np.all(np.isfinite(times)):
        raise ValidationError("times must be finite")
    if np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing")
    rng = _as_rng(rng)
    d = model.state_dim
    out = np.empty((times.size, d))
    out[0] = _gaussian_factor(model.Sigma_inf) @ rng.standard_normal(d)
    factors: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for k in range(1, times.size):
        dt = float(times[k] - times[k - 1])
        if dt not in factors:
            a, qd = discretize(model, dt)
            factors[dt] = (a, _gaussian_factor(qd))
        a, noise_factor = factors[dt]
        out[k] = a @ out[k - 1] + noise_factor @ rng.standard_normal(d)
    return out


def sample_path(
    model: JointStateSpaceModel, times, tau2, rng
) -> MultiSeriesDataset:
    """Simulate noisy observations of all series at the given times."""
    tau2 = check_tau2(tau2, model.n_series)
    rng = _as_rng(rng)
    latent = sample_latent(model, times, rng)
    positions = latent[:, model.position_indices]
    noise = rng.standard_normal(positions.shape) * np.sqrt(tau2)[None, :]
    values = positions + noise
    mask = np.ones_like(values, dtype=bool)
    return MultiSeriesDataset(times=np.asarray(times, dtype=float), values=values, mask=mask)


def synth_benchmark(seed: int, n_times: int = 100, n_test: int = 41) -> MultiSeriesDataset:
    """Two deterministic trends plus noise, with the tail of series 2 held out.

    x1(t) = 0.2 cos(5 pi t) - 2 t + 0.1 eps,  eps ~ N(0, 1)
    x2(t) = t - 0.5 cos(5 pi t) + 0.04 eta,   eta ~ N(0, 1)

    at n_times uniform random timestamps on [0, 1]; the last n_test
    timestamps of series 2 are masked for prediction, with the true
    values kept in `values` for scoring. Draw order is fixed (times,
    then eps, then eta) so a seed pins the dataset exactly.
    """
    if n_times < 2 or not 0 < n_test < n_times:
        raise ValidationError(f"need n_times >= 2 and 0 < n_test < n_times, got {n_times}, {n_test}")
    rng = _as_rng(seed)
    while True:
        t = np.sort(rng.uniform(0.0, 1.0, size=n_times))
        if np.all(np.diff(t) > 0):
            break
    eps = rng.standard_normal(n_times)
    eta = rng.standard_normal(n_times)
    x1 = 0.2 * np.cos(5.0 * np.pi * t) - 2.0 * t + 0.1 * eps
    x2 = t - 0.5 * np.cos(5.0 * np.pi * t) + 0.04 * eta
    values = np.column_stack([x1, x2])
    mask = np.ones_like(values, dtype=bool)
    mask[n_times - n_test :, 1] = False
    return MultiSeriesDataset(times=t, values=values, mask=mask, labels=("x1", "x2"))
