"""Matern kernels for coupled processes, in covariance (not correlation) form.

A collection of p series shares one Matern order nu in {1/2, 3/2, 5/2};
series j has its own length-scale ell_j, and dependence enters through a
p x R coupling matrix L acting on R shared white-noise channels. The
cross-covariance between series is not a function of |t - s| alone: with
unequal length-scales it is asymmetric in time, and the closed forms
below carry the length-scale of the *later* argument in the exponential.

With C = L L^T and the length-scale ratio r_ij = 2 sqrt(ell_i ell_j) /
(ell_i + ell_j), for s <= t and delta = t - s:

  nu = 1/2:  k_ij(s, t) = C_ij * r_ij * exp(-delta / ell_j)
  nu = 3/2:  k_ij(s, t) = C_ij * r_ij^3
             * (2 + delta (sqrt(3)/ell_i + sqrt(3)/ell_j))
             * exp(-sqrt(3) delta / ell_j)
  nu = 5/2:  no closed form; evaluated through the state-space
             representation (stationary covariance times a transition).

On the diagonal (i = j) these reduce to binom(2n, n) * C_jj times the
unit-variance Matern kernel, where n = nu - 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MixedSmoothness, ValidationError

SUPPORTED_NU = (0.5, 1.5, 2.5)


def _matern_order(nu: float) -> int:
    """Integer n with nu = n + 1/2, rejecting unsupported orders."""
    for n, known in enumerate(SUPPORTED_NU):
        if abs(nu - known) < 1e-12:
            return n
    raise ValidationError(f"nu must be one of {SUPPORTED_NU}, got {nu}")


def marginal_variance_factor(nu: float) -> int:
    """binom(2n, n): stationary position variance per unit of C_jj."""
    n = _matern_order(nu)
    return math.comb(2 * n, n)


@dataclass(frozen=True)
class MaternHyper:
    """Per-series hyperparameters: smoothness nu and length-scale ell."""

    nu: float
    ell: float

    def __post_init__(self) -> None:
        _matern_order(self.nu)
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise ValidationError(f"ell must be finite and > 0, got {self.ell}")

    @property
    def order(self) -> int:
        return _matern_order(self.nu)

    @property
    def decay_rate(self) -> float:
        """lam = sqrt(2 nu) / ell, the repeated SDE pole."""
        return math.sqrt(2.0 * self.nu) / self.ell


@dataclass(frozen=True)
class CouplingMatrix:
    """p x R noise-mixing matrix L; C = L L^T couples the series.

    R < p restricts C to rank R; R >= p leaves it unrestricted. L is only
    identified up to right-multiplication by an orthogonal matrix, which
    leaves C (and hence the model) unchanged.
    """

    L: np.ndarray
    C: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        L = np.asarray(self.L, dtype=float)
        if L.ndim != 2:
            raise ValidationError(f"L must be 2-d (p x R), got shape {L.shape}")
        if L.shape[0] < 1 or L.shape[1] < 1:
            raise ValidationError(f"L needs at least one row and one column, got {L.shape}")
        if not np.all(np.isfinite(L)):
            raise ValidationError("L contains non-finite entries")
        L = L.copy()
        L.setflags(write=False)
        C = L @ L.T
        C = 0.5 * (C + C.T)
        C.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "C", C)

    @property
    def n_series(self) -> int:
        return self.L.shape[0]

    @property
    def rank(self) -> int:
        return self.L.shape[1]

    @classmethod
    def from_covariance(cls, C: np.ndarray, rank: int | None = None) -> "CouplingMatrix":
        """Factor a PSD matrix into L with at most `rank` columns.

        Eigenvalues below 1e-12 times the trace are treated as zero; the
        retained columns are ordered by decreasing eigenvalue.
        """
        C = np.asarray(C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValidationError(f"C must be square, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ValidationError("C contains non-finite entries")
        if not np.allclose(C, C.T, atol=1e-10 * max(1.0, float(np.abs(C).max()))):
            raise ValidationError("C must be symmetric")
        p = C.shape[0]
        vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
        floor = 1e-12 * max(float(np.trace(C)), 0.0)
        if vals.min() < -max(floor, 1e-12):
            raise ValidationError(f"C is not PSD (min eigenvalue {vals.min():.3e})")
        vals = np.clip(vals, 0.0, None)
        order = np.argsort(vals)[::-1]
        keep = order[: p if rank is None else int(rank)]
        L = vecs[:, keep] * np.sqrt(vals[keep])
        if L.shape[1] == 0:
            L = np.zeros((p, 1))
        return cls(L)


def matern_univariate(dt, nu: float, ell: float, variance: float = 1.0):
    """Standard single-series Matern kernel k(dt) with marginal `variance`."""
    hyper = MaternHyper(nu=nu, ell=ell)
    if not np.isfinite(variance) or variance < 0:
        raise ValidationError(f"variance must be finite and >= 0, got {variance}")
    d = np.abs(np.asarray(dt, dtype=float))
    if not np.all(np.isfinite(d)):
        raise ValidationError("dt contains non-finite entries")
    n = hyper.order
    z = math.sqrt(2.0 * nu) * d / ell
    if n == 0:
        poly = 1.0
    elif n == 1:
        poly = 1.0 + z
    else:
        poly = 1.0 + z + z * z / 3.0
    out = variance * poly * np.exp(-z)
    return float(out) if np.isscalar(dt) or np.asarray(dt).ndim == 0 else out


def length_scale_ratio(ell_i: float, ell_j: float) -> float:
    """r_ij = 2 sqrt(ell_i ell_j) / (ell_i + ell_j), in (0, 1], 1 iff equal."""
    if not (np.isfinite(ell_i) and ell_i > 0 and np.isfinite(ell_j) and ell_j > 0):
        raise ValidationError("length-scales must be finite and > 0")
    return 2.0 * math.sqrt(ell_i * ell_j) / (ell_i + ell_j)


def correlation_from_C(C: np.ndarray) -> np.ndarray:
    """Cross-series correlation diag(C)^(-1/2) C diag(C)^(-1/2)."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValidationError(f"C must be square, got shape {C.shape}")
    d = np.diag(C)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise ValidationError("C has a non-positive diagonal entry; correlation undefined")
    inv_std = 1.0 / np.sqrt(d)
    rho = C * inv_std[:, None] * inv_std[None, :]
    np.fill_diagonal(rho, 1.0)
    return rho


def _check_hypers(hypers: tuple[MaternHyper, ...]) -> float:
    if len(hypers) == 0:
        raise ValidationError("hypers must be non-empty")
    nu = hypers[0].nu
    for h in hypers:
        if abs(h.nu - nu) > 1e-12:
            raise MixedSmoothness(f"all series must share one nu, got {h.nu} and {nu}")
    return nu


def _check_pair(
    i: int, j: int, hypers: tuple[MaternHyper, ...], coupling: CouplingMatrix
) -> float:
    nu = _check_hypers(hypers)
    p = len(hypers)
    if coupling.n_series != p:
        raise ValidationError(f"coupling has {coupling.n_series} rows for {p} series")
    if not (0 <= i < p and 0 <= j < p):
        raise ValidationError(f"series indices ({i}, {j}) out of range for p={p}")
    return nu


def cross_covariance(
    s: float,
    t: float,
    i: int,
    j: int,
    hypers: tuple[MaternHyper, ...],
    coupling: CouplingMatrix,
) -> float:
    """Cov(x_i(s), x_j(t)) for the coupled model.

    Asymmetric in time for unequal length-scales: the exponential decay
    uses the length-scale of whichever series is observed later. Swapping
    both the series pair and the time pair leaves the value unchanged.
    """
    nu = _check_pair(i, j, hypers, coupling)
    if not (np.isfinite(s) and np.isfinite(t)):
        raise ValidationError("s and t must be finite")
    if t < s:
        s, t, i, j = t, s, j, i
    delta = t - s
    c_ij = float(coupling.C[i, j])
    ell_i, ell_j = hypers[i].ell, hypers[j].ell
    r = length_scale_ratio(ell_i, ell_j)
    n = hypers[0].order
    if n == 0:
        return c_ij * r * math.exp(-delta / ell_j)
    if n == 1:
        s3 = math.sqrt(3.0)
        poly = 2.0 + delta * (s3 / ell_i + s3 / ell_j)
        return c_ij * r**3 * poly * math.exp(-s3 * delta / ell_j)
    # nu = 5/2 has no closed form; use the state-space identity
    # [Sigma_inf exp(delta Qbar^T)] restricted to the position coordinates.
    from . import ssm  # late import: ssm depends on this module's types

    return ssm.cross_covariance_ssm(delta, i, j, hypers, coupling)
