"""Joint state-space form of coupled Matern processes.

Each series j follows the Matern SDE

    (d/dt + lam_j)^(n+1) x_j(t) = C_j w_j'(t),   lam_j = sqrt(2 nu)/ell_j

written as an (n+1)-dimensional companion system over (x_j, x_j', ...).
The driving white noises are correlated across series, E w_i' w_j' =
C_ij (from the coupling matrix), so the stacked p(n+1)-dimensional state
F(t) is a single stable linear SDE with block-diagonal drift Qbar and a
rank-limited diffusion. Everything observable about the model follows
from two objects built here: the stationary covariance Sigma_inf
(solving Qbar S + S Qbar^T + Dbar = 0) and the transition exp(dt Qbar).

The diffusion constant C_j = (2 lam_j)^((2n+1)/2) is calibrated so the
stationary variance of position coordinate j is binom(2n, n) * C_jj:
the per-series variance scale lives entirely in the coupling matrix.

Stationary cross-covariance identity used throughout (s <= t):

    E[F(s) F(t)^T] = Sigma_inf exp((t - s) Qbar^T)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_sylvester

from . import numerics
from .errors import ValidationError
from .kernels import (
    CouplingMatrix,
    MaternHyper,
    _check_hypers,
    _check_pair,
    length_scale_ratio,
)

# exp(-x) underflows to 0 near x = 745; beyond that the transition is zero.
_DECAY_CUTOFF = 745.0


def diffusion_constant(nu: float, ell: float) -> float:
    """C_{nu, ell} = (2 sqrt(2 nu)/ell)^((2n+1)/2).

    Squared, this is the white-noise intensity that makes the stationary
    position variance of the univariate system equal binom(2n, n).
    """
    hyper = MaternHyper(nu=nu, ell=ell)
    n = hyper.order
    return (2.0 * hyper.decay_rate) ** ((2 * n + 1) / 2.0)


def companion_matrix(hyper: MaternHyper) -> np.ndarray:
    """Drift block Q for one series: char. poly (x + lam)^(n+1)."""
    n = hyper.order
    lam = hyper.decay_rate
    if n == 0:
        return np.array([[-lam]])
    q = np.zeros((n + 1, n + 1))
    q[:-1, 1:] = np.eye(n)
    # bottom row: -binom(n+1, k) lam^(n+1-k) for k = 0..n
    q[-1, :] = [-math.comb(n + 1, k) * lam ** (n + 1 - k) for k in range(n + 1)]
    return q


def stationary_block_univariate(hyper: MaternHyper) -> np.ndarray:
    """Stationary covariance of one series' state, unit coupling (C_jj = 1)."""
    lam = hyper.decay_rate
    n = hyper.order
    if n == 0:
        return np.array([[1.0]])
    if n == 1:
        return np.array([[2.0, 0.0], [0.0, 2.0 * lam**2]])
    return np.array(
        [
            [6.0, 0.0, -2.0 * lam**2],
            [0.0, 2.0 * lam**2, 0.0],
            [-2.0 * lam**2, 0.0, 6.0 * lam**4],
        ]
    )


def build_univariate(hyper: MaternHyper) -> "JointStateSpaceModel":
    """Single-series model with unit marginal position variance scale."""
    return build_joint((hyper,), CouplingMatrix(np.array([[1.0]])))


def transition_block(hyper: MaternHyper, dt: float) -> np.ndarray:
    """exp(dt Q) for one series' companion block, dt >= 0.

    The companion matrix has the single eigenvalue -decay_rate with
    multiplicity n + 1, so M = Q + decay_rate I is nilpotent and the
    exponential series terminates after n + 1 terms exactly.
    """
    if not (np.isfinite(dt) and dt >= 0):
        raise ValidationError(f"dt must be finite and >= 0, got {dt}")
    m = hyper.order + 1
    lam_dt = hyper.decay_rate * dt
    if lam_dt > _DECAY_CUTOFF:
        return np.zeros((m, m))
    nil = companion_matrix(hyper)
    idx = np.arange(m)
    nil[idx, idx] += hyper.decay_rate
    out = np.eye(m)
    term = np.eye(m)
    for k in range(1, m):
        term = (dt / k) * (term @ nil)
        out += term
    out *= math.exp(-lam_dt)
    return out


def _pair_structure(hi: MaternHyper, hj: MaternHyper) -> np.ndarray:
    """Unit-coupling stationary cross block B_ij (C_ij = 1), i before j.

    For nu = 1/2 and 3/2 these are closed forms in the length-scale
    ratio r_ij; for nu = 5/2 the block solves the pair Sylvester
    equation Q_i B + B Q_j^T + C_i C_j e e^T = 0.
    """
    n = hi.order
    r = length_scale_ratio(hi.ell, hj.ell)
    if n == 0:
        return np.array([[r]])
    if n == 1:
        s3i, s3j = math.sqrt(3.0) / hi.ell, math.sqrt(3.0) / hj.ell
        return r**3 * np.array(
            [[2.0, s3i - s3j], [s3j - s3i, (s3i * s3j) * 2.0]]
        )
    d = np.zeros((3, 3))
    d[-1, -1] = diffusion_constant(hi.nu, hi.ell) * diffusion_constant(hj.nu, hj.ell)
    b = solve_sylvester(companion_matrix(hi), companion_matrix(hj).T, -d)
    return b


@lru_cache(maxsize=128)
def _structure_cached(hypers: tuple[MaternHyper, ...]) -> np.ndarray:
    p = len(hypers)
    m = hypers[0].order + 1
    out = np.zeros((p, p, m, m))
    for i in range(p):
        for j in range(i, p):
            block = _pair_structure(hypers[i], hypers[j])
            out[i, j] = block
            out[j, i] = block.T
    out.setflags(write=False)
    return out


def stationary_structure(hypers: tuple[MaternHyper, ...]) -> np.ndarray:
    """(p, p, m, m) tensor of unit-coupling blocks; Sigma_inf is the
    coupling-weighted assembly of these, linear in C."""
    hypers = tuple(hypers)
    _check_hypers(hypers)
    return _structure_cached(hypers)


def _assemble(structure: np.ndarray, C: np.ndarray) -> np.ndarray:
    p, _, m, _ = structure.shape
    full = structure * C[:, :, None, None]
    # (p, p, m, m) -> (p*m, p*m) with series-major state ordering
    sigma = full.transpose(0, 2, 1, 3).reshape(p * m, p * m)
    return 0.5 * (sigma + sigma.T)


def joint_stationary_covariance(
    hypers: tuple[MaternHyper, ...], coupling: CouplingMatrix
) -> np.ndarray:
    """Sigma_inf from the analytic/Sylvester per-pair blocks."""
    hypers = tuple(hypers)
    _check_pair(0, 0, hypers, coupling)
    return _assemble(stationary_structure(hypers), coupling.C)


def joint_stationary_covariance_lyapunov(
    hypers: tuple[MaternHyper, ...], coupling: CouplingMatrix
) -> np.ndarray:
    """Sigma_inf from the full joint Lyapunov equation, as a cross-check."""
    hypers = tuple(hypers)
    _check_pair(0, 0, hypers, coupling)
    p = len(hypers)
    m = hypers[0].order + 1
    qbar = _block_diag([companion_matrix(h) for h in hypers])
    consts = np.array([diffusion_constant(h.nu, h.ell) for h in hypers])
    dbar = np.zeros((p * m, p * m))
    last = np.arange(p) * m + (m - 1)
    dbar[np.ix_(last, last)] = coupling.C * np.outer(consts, consts)
    return numerics.solve_lyapunov(qbar, dbar)


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    m = blocks[0].shape[0]
    p = len(blocks)
    out = np.zeros((p * m, p * m))
    for k, b in enumerate(blocks):
        out[k * m : (k + 1) * m, k * m : (k + 1) * m] = b
    return out


@dataclass(frozen=True)
class JointStateSpaceModel:
    """Stacked state-space model for p coupled Matern series."""

    hypers: tuple[MaternHyper, ...]
    coupling: CouplingMatrix
    Qbar: np.ndarray = field(init=False, compare=False, repr=False)
    Sigma_inf: np.ndarray = field(init=False, compare=False, repr=False)
    structure: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        hypers = tuple(self.hypers)
        object.__setattr__(self, "hypers", hypers)
        _check_pair(0, 0, hypers, self.coupling)
        structure = stationary_structure(hypers)
        sigma = _assemble(structure, self.coupling.C)
        qbar = _block_diag([companion_matrix(h) for h in hypers])
        qbar.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "Qbar", qbar)
        object.__setattr__(self, "Sigma_inf", sigma)
        object.__setattr__(self, "structure", structure)

    @property
    def n_series(self) -> int:
        return len(self.hypers)

    @property
    def order(self) -> int:
        return self.hypers[0].order

    @property
    def block_size(self) -> int:
        return self.order + 1

    @property
    def state_dim(self) -> int:
        return self.n_series * self.block_size

    @property
    def position_indices(self) -> np.ndarray:
        """State indices of the observable (position) coordinate per series."""
        return np.arange(self.n_series) * self.block_size

    def with_coupling(self, coupling: CouplingMatrix) -> "JointStateSpaceModel":
        """Same length-scales, new coupling; reuses the cached structure."""
        if coupling.n_series != self.n_series:
            raise ValidationError(
                f"coupling has {coupling.n_series} rows for {self.n_series} series"
            )
        return replace(self, coupling=coupling)


def build_joint(
    hypers: tuple[MaternHyper, ...], coupling: CouplingMatrix
) -> JointStateSpaceModel:
    """Validate and assemble the joint model.

    Sigma_inf is PSD by construction for any C = L L^T; the eigenvalue
    check here guards against user-supplied inconsistencies and costs
    one small eigh at build time only.
    """
    model = JointStateSpaceModel(hypers=tuple(hypers), coupling=coupling)
    vals = np.linalg.eigvalsh(model.Sigma_inf)
    tol = 1e-10 * max(1.0, float(vals.max()) if vals.size else 1.0)
    if vals.min() < -tol:
        raise ValidationError(
            f"joint stationary covariance is not PSD (min eigenvalue {vals.min():.3e})"
        )
    return model


def transition_matrix(model: JointStateSpaceModel, dt: float) -> np.ndarray:
    """exp(dt Qbar), assembled block-diagonally from per-series blocks."""
    return _block_diag([transition_block(h, dt) for h in model.hypers])


def discretize(model: JointStateSpaceModel, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact discretization over a gap dt: state transition A and process
    noise covariance Q_d = Sigma_inf - A Sigma_inf A^T (stationarity)."""
    a = transition_matrix(model, dt)
    s = model.Sigma_inf
    q = s - a @ s @ a.T
    return a, 0.5 * (q + q.T)


def cross_covariance_ssm(
    delta: float,
    i: int,
    j: int,
    hypers: tuple[MaternHyper, ...],
    coupling: CouplingMatrix,
) -> float:
    """Position-position entry of Sigma_inf exp(delta Qbar^T) for the
    (i, j) pair; delta = t - s >= 0 with series i at the earlier time."""
    hypers = tuple(hypers)
    _check_pair(i, j, hypers, coupling)
    if not (np.isfinite(delta) and delta >= 0):
        raise ValidationError(f"delta must be finite and >= 0, got {delta}")
    b_ij = float(coupling.C[i, j]) * stationary_structure(hypers)[i, j]
    a_j = transition_block(hypers[j], delta)
    return float((b_ij @ a_j.T)[0, 0])
