"""Two-stage inference: per-series length-scale MLE, then MH over the coupling.

Stage 1 fits each series on its own (length-scale, signal variance,
noise variance; all on log scale, Nelder-Mead with dispersed restarts).
The per-series signal variances are then discarded: in the joint model
the variance scale lives in the coupling matrix. Stage 2 freezes the
length-scales and runs a random-walk Metropolis-Hastings chain over the
rows of L and the log noise variances, one block per iteration, cycled
systematically. Proposal scales adapt toward a target acceptance rate
during burn-in only, so post-burn-in draws come from a fixed kernel.

Posterior reports are dominated by the cross-series correlation matrix
rho = diag(C)^(-1/2) C diag(C)^(-1/2), computed per draw and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize

from .errors import (
    EmptyChain,
    NotPositiveDefinite,
    NumericError,
    OptimizerFailed,
    ValidationError,
)
from .filter_smoother import MultiSeriesDataset, kalman_filter, precompute_transitions
from .kernels import CouplingMatrix, MaternHyper, correlation_from_C, marginal_variance_factor
from .ssm import build_joint

# relative floor on noise variances inside likelihood evaluations
TAU2_FLOOR_FACTOR = 1e-10


class Stage1Config(BaseModel):
    """Per-series maximum-likelihood settings."""

    model_config = ConfigDict(extra="forbid")

    restarts: int = Field(default=4, ge=1, le=12)
    max_iter: int = Field(default=400, ge=1)
    tol: float = Field(default=1e-7, gt=0)


class Stage2Config(BaseModel):
    """MH chain settings; one iteration updates one parameter block."""

    model_config = ConfigDict(extra="forbid")

    chain_length: int = Field(default=50_000, ge=0)
    burn_in: int = Field(default=10_000, ge=0)
    proposal_scale: float = Field(default=0.1, gt=0)
    adapt: bool = True
    target_acceptance: float = Field(default=0.25, gt=0.0, lt=1.0)
    seed: int = 0


class PriorConfig(BaseModel):
    """Weakly informative, data-scaled priors.

    L entries are iid Normal(0, s_L^2) with s_L = coupling_scale_factor
    times the pooled empirical standard deviation; the Frobenius form
    makes the prior exactly invariant under right-orthogonal rotations
    of L, matching the model's identifiability class. log tau_j^2 is
    Normal(log(noise_location_factor * var_j), noise_scale^2).
    """

    model_config = ConfigDict(extra="forbid")

    coupling_scale_factor: float = Field(default=2.0, gt=0)
    noise_location_factor: float = Field(default=0.01, gt=0)
    noise_scale: float = Field(default=1.5, gt=0)


class InferenceConfig(BaseModel):
    """Full two-stage configuration. nu and rank are always explicit."""

    model_config = ConfigDict(extra="forbid")

    nu: float
    rank: int = Field(ge=1)
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    priors: PriorConfig = PriorConfig()

    @model_validator(mode="after")
    def _check(self) -> "InferenceConfig":
        try:
            MaternHyper(nu=self.nu, ell=1.0)
        except ValidationError as exc:
            # keep config errors uniformly pydantic
            raise ValueError(str(exc)) from exc
        if self.stage2.chain_length > 0 and self.stage2.chain_length <= self.stage2.burn_in:
            raise ValueError(
                f"chain_length ({self.stage2.chain_length}) must exceed "
                f"burn_in ({self.stage2.burn_in})"
            )
        return self


@dataclass(frozen=True)
class SeriesFit:
    """Stage-1 result for one series. sigma2 is reported for diagnostics
    but the joint model takes its scale from the coupling matrix."""

    label: str
    ell: float
    sigma2: float
    tau2: float
    loglik: float
    n_obs: int
    noise_dominated: bool


def _univariate_dataset(times: np.ndarray, values: np.ndarray) -> MultiSeriesDataset:
    return MultiSeriesDataset(
        times=times, values=values[:, None], mask=np.ones((times.size, 1), dtype=bool)
    )


def _univariate_negloglik(x: np.ndarray, nu: float, data: MultiSeriesDataset, var_floor: float) -> float:
    log_ell, log_sigma2, log_tau2 = np.clip(x, -40.0, 40.0)
    factor = marginal_variance_factor(nu)
    try:
        coupling = CouplingMatrix(np.array([[math.sqrt(math.exp(log_sigma2) / factor)]]))
        model = build_joint((MaternHyper(nu=nu, ell=math.exp(log_ell)),), coupling)
        tau2 = max(math.exp(log_tau2), var_floor)
        res = kalman_filter(model, data, tau2, store=False)
    except NumericError:
        return np.inf
    return -res.loglik if np.isfinite(res.loglik) else np.inf


def _initial_lengthscales(times: np.ndarray, values: np.ndarray, restarts: int) -> list[float]:
    span = float(times[-1] - times[0])
    crossings = int(np.sum(np.diff(np.sign(values - values.mean())) != 0))
    data_guess = min(max(span / max(crossings, 1), span / 50.0), span)
    guesses = [span / 20.0, span / 5.0, span / 2.0, data_guess]
    while len(guesses) < restarts:
        guesses.append(span / 50.0 * (50.0 ** (len(guesses) / max(restarts - 1, 1))))
    return guesses[:restarts]


def fit_lengthscales(
    data: MultiSeriesDataset, nu: float, config: Stage1Config | None = None
) -> list[SeriesFit]:
    """Stage 1: independent Matern MLE per series on its observed entries."""
    config = config or Stage1Config()
    MaternHyper(nu=nu, ell=1.0)
    fits = []
    for j in range(data.n_series):
        times, values = data.observed_series(j)
        if times.size < 3:
            raise ValidationError(
                f"series {data.labels[j]!r} has {times.size} observations; need >= 3 to fit"
            )
        sub = _univariate_dataset(times, values)
        var = float(np.var(values))
        var = max(var, 1e-12)
        var_floor = TAU2_FLOOR_FACTOR * var
        best = None
        for ell0 in _initial_lengthscales(times, values, config.restarts):
            x0 = np.log([ell0, 0.9 * var, 0.1 * var])
            res = minimize(
                _univariate_negloglik,
                x0,
                args=(nu, sub, var_floor),
                method="Nelder-Mead",
                options={
                    "maxiter": config.max_iter,
                    "fatol": config.tol,
                    "xatol": 1e-4,
                },
            )
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is None:
            raise OptimizerFailed(f"all restarts diverged for series {data.labels[j]!r}")
        log_ell, log_sigma2, log_tau2 = np.clip(best.x, -40.0, 40.0)
        ell, sigma2, tau2 = math.exp(log_ell), math.exp(log_sigma2), math.exp(log_tau2)
        gaps = np.diff(times)
        min_gap = float(gaps.min()) if gaps.size else 0.0
        noise_dominated = tau2 >= sigma2 or ell < 2.0 * min_gap
        fits.append(
            SeriesFit(
                label=data.labels[j],
                ell=ell,
                sigma2=sigma2,
                tau2=tau2,
                loglik=-float(best.fun),
                n_obs=int(times.size),
                noise_dominated=bool(noise_dominated),
            )
        )
    return fits


@dataclass(frozen=True)
class PosteriorSamples:
    """Raw MH output; draws include burn-in (summaries drop it)."""

    L: np.ndarray
    tau2: np.ndarray
    log_posterior: np.ndarray
    accepted: np.ndarray
    burn_in: int
    seed: int
    acceptance_rate: float | None

    @property
    def n_draws(self) -> int:
        return self.L.shape[0]

    def post_burn_in(self) -> tuple[np.ndarray, np.ndarray]:
        """(L, tau2) draws after burn-in."""
        return self.L[self.burn_in :], self.tau2[self.burn_in :]


@dataclass(frozen=True)
class _Priors:
    s_L: float
    mu_log_tau2: np.ndarray
    sd_log_tau2: float
    tau2_floor: np.ndarray


def _series_variances(data: MultiSeriesDataset) -> np.ndarray:
    out = np.empty(data.n_series)
    for j in range(data.n_series):
        _, values = data.observed_series(j)
        out[j] = np.var(values) if values.size >= 2 else 1.0
    return np.maximum(out, 1e-12)


def _build_priors(data: MultiSeriesDataset, config: PriorConfig) -> _Priors:
    variances = _series_variances(data)
    pooled_std = math.sqrt(max(float(variances.mean()), 1e-12))
    return _Priors(
        s_L=config.coupling_scale_factor * pooled_std,
        mu_log_tau2=np.log(config.noise_location_factor * variances),
        sd_log_tau2=config.noise_scale,
        tau2_floor=TAU2_FLOOR_FACTOR * variances,
    )


def _pairwise_covariance(data: MultiSeriesDataset) -> np.ndarray:
    """Empirical covariance on pairwise-complete observations."""
    p = data.n_series
    out = np.zeros((p, p))
    variances = _series_variances(data)
    for i in range(p):
        out[i, i] = variances[i]
        for j in range(i + 1, p):
            both = data.mask[:, i] & data.mask[:, j]
            if both.sum() >= 2:
                yi = data.values[both, i]
                yj = data.values[both, j]
                cov = float(np.mean((yi - yi.mean()) * (yj - yj.mean())))
                out[i, j] = out[j, i] = cov
    return out


def initial_coupling(data: MultiSeriesDataset, nu: float, rank: int) -> CouplingMatrix:
    """Start L at a rank-truncated factor of the empirical covariance,
    scaled down by the marginal variance factor of the Matern order."""
    emp = _pairwise_covariance(data) / marginal_variance_factor(nu)
    vals, vecs = np.linalg.eigh(0.5 * (emp + emp.T))
    vals = np.clip(vals, 0.0, None)
    order = np.argsort(vals)[::-1][:rank]
    L = vecs[:, order] * np.sqrt(vals[order])
    if L.shape[1] < rank:
        L = np.pad(L, ((0, 0), (0, rank - L.shape[1])))
    if not np.any(L):
        L = np.full((data.n_series, rank), 1e-3)
    return CouplingMatrix(L)


def mh_sample(
    data: MultiSeriesDataset,
    ells,
    config: InferenceConfig,
    tau2_init=None,
) -> PosteriorSamples:
    """Stage 2: random-walk MH over L rows and log noise variances.

    Length-scales stay fixed, so the per-gap transition matrices are
    computed once and shared by every likelihood evaluation. A proposal
    whose likelihood evaluation fails numerically scores -inf and is
    rejected; the same failure at the initial state raises, since it
    means the starting point itself is unusable.
    """
    ells = np.asarray(ells, dtype=float).ravel()
    if ells.size != data.n_series:
        raise ValidationError(f"{ells.size} length-scales for {data.n_series} series")
    p = data.n_series
    rank = config.rank
    stage2 = config.stage2
    priors = _build_priors(data, config.priors)
    hypers = tuple(MaternHyper(nu=config.nu, ell=float(e)) for e in ells)
    coupling0 = initial_coupling(data, config.nu, rank)
    base = build_joint(hypers, coupling0)
    transitions = precompute_transitions(base, data.times)

    if tau2_init is None:
        tau2_init = np.exp(priors.mu_log_tau2)
    tau2_init = np.asarray(tau2_init, dtype=float).ravel()
    if tau2_init.size == 1:
        tau2_init = np.full(p, tau2_init[0])
    if tau2_init.size != p:
        raise ValidationError(f"{tau2_init.size} tau2 entries for {p} series")
    tau2_init = np.maximum(tau2_init, priors.tau2_floor)

    def log_posterior(L: np.ndarray, log_tau2: np.ndarray, strict: bool = False) -> float:
        try:
            model = base.with_coupling(CouplingMatrix(L))
            tau2 = np.maximum(np.exp(log_tau2), priors.tau2_floor)
            ll = kalman_filter(model, data, tau2, transitions=transitions, store=False).loglik
        except NumericError:
            if strict:
                raise
            return -np.inf
        prior = -0.5 * float(np.sum(L * L)) / priors.s_L**2
        prior -= 0.5 * float(np.sum((log_tau2 - priors.mu_log_tau2) ** 2)) / priors.sd_log_tau2**2
        return ll + prior

    L_cur = np.array(coupling0.L)
    lt_cur = np.log(tau2_init)
    lp_cur = log_posterior(L_cur, lt_cur, strict=True)
    if not np.isfinite(lp_cur):
        raise NotPositiveDefinite("initial MH state has non-finite log-posterior")

    n_iter = stage2.chain_length
    rng = np.random.Generator(np.random.PCG64(stage2.seed))
    n_blocks = p + 1
    scales = np.empty(n_blocks)
    scales[:p] = stage2.proposal_scale * max(priors.s_L / 2.0, 1e-6)
    scales[p] = stage2.proposal_scale
    counts = np.zeros(n_blocks)

    L_draws = np.empty((n_iter, p, rank))
    tau2_draws = np.empty((n_iter, p))
    log_posts = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=bool)

    for it in range(n_iter):
        block = it % n_blocks
        if block < p:
            L_new = L_cur.copy()
            L_new[block] += scales[block] * rng.standard_normal(rank)
            lt_new = lt_cur
        else:
            L_new = L_cur
            lt_new = lt_cur + scales[block] * rng.standard_normal(p)
        lp_new = log_posterior(L_new, lt_new)
        accept = np.log(rng.uniform()) < lp_new - lp_cur
        if accept:
            L_cur, lt_cur, lp_cur = L_new, lt_new, lp_new
            accepted[it] = True
        if stage2.adapt and it < stage2.burn_in:
            counts[block] += 1.0
            step = counts[block] ** -0.6
            scales[block] *= math.exp(step * ((1.0 if accept else 0.0) - stage2.target_acceptance))
            scales[block] = min(max(scales[block], 1e-10), 1e10)
        L_draws[it] = L_cur
        tau2_draws[it] = np.exp(lt_cur)
        log_posts[it] = lp_cur

    kept = accepted[stage2.burn_in :]
    rate = float(kept.mean()) if kept.size else None
    return PosteriorSamples(
        L=L_draws,
        tau2=tau2_draws,
        log_posterior=log_posts,
        accepted=accepted,
        burn_in=stage2.burn_in if n_iter else 0,
        seed=stage2.seed,
        acceptance_rate=rate,
    )


@dataclass(frozen=True)
class PosteriorSummary:
    """Moments and interval estimates from the post-burn-in draws."""

    C_mean: np.ndarray
    C_last: np.ndarray
    rho_mean: np.ndarray
    rho_lower: np.ndarray
    rho_upper: np.ndarray
    tau2_mean: np.ndarray
    tau2_last: np.ndarray
    acceptance_rate: float | None
    n_draws: int


def _rho_of_draw(C: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(np.diag(C), 1e-300))
    rho = C / d[:, None] / d[None, :]
    np.fill_diagonal(rho, 1.0)
    return rho


def summarize(samples: PosteriorSamples, interval: float = 0.95) -> PosteriorSummary:
    """Posterior means and central credible intervals; correlations are
    computed draw by draw and then averaged."""
    if not 0 < interval < 1:
        raise ValidationError(f"interval must be in (0, 1), got {interval}")
    L, tau2 = samples.post_burn_in()
    if L.shape[0] == 0:
        raise EmptyChain("no draws after burn-in")
    C_draws = np.einsum("kpr,kqr->kpq", L, L)
    rho_draws = np.stack([_rho_of_draw(c) for c in C_draws])
    lo, hi = np.quantile(rho_draws, [0.5 - interval / 2, 0.5 + interval / 2], axis=0)
    return PosteriorSummary(
        C_mean=C_draws.mean(axis=0),
        C_last=C_draws[-1],
        rho_mean=rho_draws.mean(axis=0),
        rho_lower=lo,
        rho_upper=hi,
        tau2_mean=tau2.mean(axis=0),
        tau2_last=tau2[-1],
        acceptance_rate=samples.acceptance_rate,
        n_draws=int(L.shape[0]),
    )
