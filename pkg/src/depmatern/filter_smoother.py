"""Kalman filtering, RTS smoothing and missing-value prediction.

The coupled model in state-space form admits an O(N) exact likelihood:
start the filter at the stationary distribution (zero mean, Sigma_inf),
propagate with the per-gap transition, and update with whichever series
are observed at each timestamp. Missing entries simply drop rows from
the observation; fully missing timestamps are prediction-only steps.

Numerical conventions: innovation solves go through the shared jitter
Cholesky, covariance updates use the Joseph form, and every covariance
is re-symmetrized after update. No explicit inverses are formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import get_lapack_funcs

from . import numerics
from .errors import FilterDivergence, NumericError, ValidationError
from .ssm import JointStateSpaceModel, transition_matrix

_LOG_2PI = float(np.log(2.0 * np.pi))

# raw LAPACK handles: the filter runs thousands of times per MH chain on
# tiny matrices, where the scipy wrappers' validation dominates the cost
_POTRF, _TRTRS = get_lapack_funcs(("potrf", "trtrs"), (np.empty((1, 1)),))


def _chol_lower(s: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; falls back to the shared jitter policy."""
    c, info = _POTRF(s, lower=1, clean=0, overwrite_a=0)
    if info != 0:
        return numerics.cholesky(s)
    return c


def _tri_solve(chol: np.ndarray, b: np.ndarray, transposed: bool = False) -> np.ndarray:
    x, info = _TRTRS(chol, b, lower=1, trans=1 if transposed else 0)
    if info != 0:
        raise NumericError(f"triangular solve failed (LAPACK info {info})")
    return x


@dataclass(frozen=True)
class MultiSeriesDataset:
    """N timestamps of p series with per-entry observed/missing mask.

    `values` may hold anything (commonly NaN, or held-out truths) where
    `mask` is False; observed entries must be finite. Timestamps must be
    strictly increasing. A dataset with no observed entries is legal
    here (the filter degrades to the prior); file ingestion is stricter.
    """

    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != times.size and values.shape[1] == times.size:
            raise ValidationError("values must be (n_times, n_series), looks transposed")
        mask = np.atleast_2d(np.asarray(self.mask, dtype=bool))
        if times.size == 0:
            raise ValidationError("dataset needs at least one timestamp")
        if not np.all(np.isfinite(times)):
            raise ValidationError("timestamps must be finite")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if values.shape != (times.size, values.shape[1]) or values.shape[1] < 1:
            raise ValidationError(f"values shape {values.shape} invalid")
        if mask.shape != values.shape:
            raise ValidationError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not np.all(np.isfinite(values[mask])):
            raise ValidationError("observed values must be finite")
        labels = tuple(self.labels) if self.labels else tuple(
            f"series_{j}" for j in range(values.shape[1])
        )
        if len(labels) != values.shape[1]:
            raise ValidationError(f"{len(labels)} labels for {values.shape[1]} series")
        if len(set(labels)) != len(labels):
            raise ValidationError("series labels must be unique")
        for arr in (times, values, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "labels", labels)

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def observed_series(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(times, values) of the observed entries of series j."""
        if not 0 <= j < self.n_series:
            raise ValidationError(f"series index {j} out of range")
        sel = self.mask[:, j]
        return self.times[sel], self.values[sel, j]


def check_tau2(tau2, p: int) -> np.ndarray:
    """Broadcast per-series noise variances to shape (p,) and validate."""
    arr = np.asarray(tau2, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(p, float(arr[0]))
    if arr.size != p:
        raise ValidationError(f"tau2 has {arr.size} entries for {p} series")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError("tau2 entries must be finite and >= 0")
    return arr


def precompute_transitions(
    model: JointStateSpaceModel, times: np.ndarray
) -> list[np.ndarray]:
    """Transition matrices per step; entry 0 is identity (stationary start).

    Gaps that repeat exactly share one matrix, which makes regular grids
    cheap; no rounding is applied, so this is exact.
    """
    times = np.asarray(times, dtype=float)
    gaps = np.diff(times)
    uniq, inverse = np.unique(gaps, return_inverse=True)
    mats = [transition_matrix(model, float(dt)) for dt in uniq]
    eye = np.eye(model.state_dim)
    return [eye] + [mats[k] for k in inverse]


@dataclass(frozen=True)
class FilterResult:
    """Forward-pass output; state trajectories are None when store=False."""

    loglik: float
    filtered_means: np.ndarray | None
    filtered_covs: np.ndarray | None
    predicted_means: np.ndarray | None
    predicted_covs: np.ndarray | None
    transitions: list[np.ndarray] | None
    tau2: np.ndarray


@dataclass(frozen=True)
class SmootherResult:
    """RTS pass output plus the position-coordinate marginals."""

    means: np.ndarray
    covs: np.ndarray
    position_means: np.ndarray = field(init=False, compare=False)
    position_vars: np.ndarray = field(init=False, compare=False)
    _position_idx: np.ndarray

    def __post_init__(self) -> None:
        idx = self._position_idx
        object.__setattr__(self, "position_means", self.means[:, idx])
        object.__setattr__(
            self, "position_vars", np.einsum("kii->ki", self.covs[:, idx][:, :, idx])
        )


def _check_model_data(model: JointStateSpaceModel, data: MultiSeriesDataset) -> None:
    if model.n_series != data.n_series:
        raise ValidationError(
            f"model has {model.n_series} series, dataset has {data.n_series}"
        )


def kalman_filter(
    model: JointStateSpaceModel,
    data: MultiSeriesDataset,
    tau2,
    transitions: list[np.ndarray] | None = None,
    store: bool = True,
) -> FilterResult:
    """Run the forward filter and return the exact marginal log-likelihood.

    Args:
        model: joint state-space model (defines Sigma_inf and transitions).
        data: observations with missingness mask.
        tau2: per-series iid observation noise variances (scalar broadcasts).
        transitions: optional precomputed output of `precompute_transitions`
            (reused across likelihood evaluations when only the coupling or
            noise changes).
        store: keep per-step means/covariances for smoothing. The
            likelihood value is identical either way; store=False skips the
            bookkeeping for likelihood-only loops.
    """
    _check_model_data(model, data)
    tau2 = check_tau2(tau2, model.n_series)
    n = data.n_times
    d = model.state_dim
    if transitions is None:
        transitions = precompute_transitions(model, data.times)
    elif len(transitions) != n:
        raise ValidationError(f"{len(transitions)} transitions for {n} timestamps")
    sigma_inf = model.Sigma_inf
    pos = model.position_indices

    if store:
        f_means = np.empty((n, d))
        f_covs = np.empty((n, d, d))
        p_means = np.empty((n, d))
        p_covs = np.empty((n, d, d))

    # repeated gaps share one transition object; batch the process noise
    # over the unique ones (Qd = Sigma_inf - A Sigma_inf A^T per gap)
    uniq_index: dict[int, int] = {}
    uniq_mats: list[np.ndarray] = []
    step_qd = np.empty(n, dtype=np.intp)
    for k in range(1, n):
        a = transitions[k]
        i = uniq_index.get(id(a))
        if i is None:
            i = len(uniq_mats)
            uniq_index[id(a)] = i
            uniq_mats.append(a)
        step_qd[k] = i
    if uniq_mats:
        stack = np.stack(uniq_mats)
        qd_all = sigma_inf - stack @ sigma_inf @ stack.transpose(0, 2, 1)
        qd_all = 0.5 * (qd_all + qd_all.transpose(0, 2, 1))

    # observation patterns also repeat; precompute their index arrays
    pattern_cache: dict[bytes, tuple | None] = {}
    step_obs: list[tuple | None] = []
    for k in range(n):
        key = data.mask[k].tobytes()
        entry = pattern_cache.get(key, False)
        if entry is False:
            obs = data.mask[k]
            if obs.any():
                cols = pos[obs]
                entry = (obs, cols, cols[:, None], np.arange(cols.size), tau2[obs])
            else:
                entry = None
            pattern_cache[key] = entry
        step_obs.append(entry)

    eye = np.eye(d)
    mean = np.zeros(d)
    cov = sigma_inf
    loglik = 0.0
    values = data.values
    for k in range(n):
        if k > 0:
            a = transitions[k]
            mean = a @ mean
            cov = a @ cov @ a.T + qd_all[step_qd[k]]
        if store:
            p_means[k] = mean
            p_covs[k] = cov
        entry = step_obs[k]
        if entry is not None:
            obs, cols, cols_2d, diag_idx, t2 = entry
            innov = values[k, obs] - mean[cols]
            s = cov[cols_2d, cols]
            s[diag_idx, diag_idx] += t2
            chol = _chol_lower(s)
            z = _tri_solve(chol, innov)
            step_ll = -0.5 * (cols.size * _LOG_2PI + z @ z) - np.log(
                chol.diagonal()
            ).sum()
            if not math.isfinite(step_ll):
                raise FilterDivergence(f"non-finite innovation term at step {k}")
            loglik += step_ll
            # gain K = cov[:, cols] S^{-1} via two triangular solves
            u = _tri_solve(chol, cov[cols, :])
            gain = _tri_solve(chol, u, transposed=True).T
            mean = mean + gain @ innov
            i_kh = eye.copy()
            i_kh[:, cols] -= gain
            cov = i_kh @ cov @ i_kh.T + (gain * t2) @ gain.T
            cov = 0.5 * (cov + cov.T)
        if store:
            f_means[k] = mean
            f_covs[k] = cov
    if store:
        return FilterResult(
            float(loglik), f_means, f_covs, p_means, p_covs, transitions, tau2
        )
    return FilterResult(float(loglik), None, None, None, None, None, tau2)


def rts_smooth(
    model: JointStateSpaceModel, data: MultiSeriesDataset, filt: FilterResult
) -> SmootherResult:
    """Backward pass producing the fixed-interval smoothing distribution.

    Computes the same posterior as the Rauch-Tung-Striebel recursion but
    through the adjoint (Bryson-Frazier) form, which only ever factorizes
    innovation covariances. Predicted state covariances are never inverted,
    so rank-deficient couplings (R < p) lose no accuracy.

    The adjoint pair (lam, big_lam) after folding in measurement k is

        lam_k     = -H' S_k^{-1} v_k + (I - K_k H)' A_{k+1}' lam_{k+1}
        big_lam_k = H' S_k^{-1} H + (I - K_k H)' A_{k+1}' big_lam_{k+1}
                    A_{k+1} (I - K_k H)

    and the smoothed moments at step k are

        m_k = m_k^f - P_k^f A_{k+1}' lam_{k+1}
        P_k = P_k^f - P_k^f A_{k+1}' big_lam_{k+1} A_{k+1} P_k^f.
    """
    _check_model_data(model, data)
    if filt.filtered_means is None:
        raise ValidationError("smoothing needs a filter run with store=True")
    n = data.n_times
    d = model.state_dim
    pos = model.position_indices
    tau2 = filt.tau2
    means = filt.filtered_means.copy()
    covs = filt.filtered_covs.copy()
    lam = np.zeros(d)
    big_lam = np.zeros((d, d))
    values, mask = data.values, data.mask
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            a_next = filt.transitions[k + 1]
            at_lam = a_next.T @ lam
            at_big = a_next.T @ big_lam @ a_next
            p_filt = filt.filtered_covs[k]
            means[k] = filt.filtered_means[k] - p_filt @ at_lam
            cov = p_filt - p_filt @ at_big @ p_filt
            covs[k] = 0.5 * (cov + cov.T)
        else:
            # no data beyond the last step: smoothed == filtered there
            at_lam = np.zeros(d)
            at_big = np.zeros((d, d))
        if k == 0:
            break
        obs = mask[k]
        if obs.any():
            cols = pos[obs]
            p_pred = filt.predicted_covs[k]
            # same ops as the filter update, so the factor and gain match it
            s = p_pred[cols[:, None], cols]
            idx = np.arange(cols.size)
            s[idx, idx] += tau2[obs]
            chol = _chol_lower(s)
            innov = values[k, obs] - filt.predicted_means[k][cols]
            u = _tri_solve(chol, p_pred[cols, :])
            gain = _tri_solve(chol, u, transposed=True).T
            z = _tri_solve(chol, innov)
            z = _tri_solve(chol, z, transposed=True)
            lam = at_lam.copy()
            lam[cols] -= gain.T @ at_lam
            lam[cols] -= z
            folded = at_big.copy()
            folded[cols, :] -= gain.T @ at_big
            right = folded.copy()
            right[:, cols] -= folded @ gain
            s_inv = _tri_solve(chol, np.eye(cols.size))
            s_inv = _tri_solve(chol, s_inv, transposed=True)
            right[np.ix_(cols, cols)] += s_inv
            big_lam = 0.5 * (right + right.T)
        else:
            lam = at_lam
            big_lam = at_big
    return SmootherResult(means=means, covs=covs, _position_idx=model.position_indices)


@dataclass(frozen=True)
class PredictionTable:
    """Predictions for masked entries, sorted by (time, series index).

    var_latent is the smoothed variance of the latent position;
    var_predictive adds the series' observation noise tau2.
    """

    times: np.ndarray
    series_idx: np.ndarray
    labels: tuple[str, ...]
    mean: np.ndarray
    var_latent: np.ndarray
    var_predictive: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.times.size


def predict_missing(
    model: JointStateSpaceModel,
    data: MultiSeriesDataset,
    tau2,
) -> PredictionTable:
    """Posterior mean and variance for every masked entry of the dataset."""
    _check_model_data(model, data)
    tau2 = check_tau2(tau2, model.n_series)
    filt = kalman_filter(model, data, tau2, store=True)
    smooth = rts_smooth(model, data, filt)
    rows_t, rows_j = np.nonzero(~data.mask)
    order = np.lexsort((rows_j, rows_t))
    rows_t, rows_j = rows_t[order], rows_j[order]
    mean = smooth.position_means[rows_t, rows_j]
    var_latent = smooth.position_vars[rows_t, rows_j]
    neg = var_latent < 0
    if np.any(var_latent < -1e-8 * max(1.0, float(np.abs(var_latent).max(initial=0.0)))):
        raise FilterDivergence("smoothed variance strongly negative")
    var_latent = np.where(neg, 0.0, var_latent)
    return PredictionTable(
        times=data.times[rows_t],
        series_idx=rows_j,
        labels=data.labels,
        mean=mean,
        var_latent=var_latent,
        var_predictive=var_latent + tau2[rows_j],
    )
