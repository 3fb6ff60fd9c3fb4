"""End-to-end flows shared by the service, the CLI and the tests:
two-stage inference, posterior prediction with either engine, and the
synthetic benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import compute_smse
from .errors import DegenerateTruth, ValidationError
from .filter_smoother import (
    MultiSeriesDataset,
    PredictionTable,
    kalman_filter,
    predict_missing,
)
from .inference import (
    InferenceConfig,
    PosteriorSamples,
    PosteriorSummary,
    SeriesFit,
    fit_lengthscales,
    mh_sample,
    summarize,
)
from .kernels import CouplingMatrix, MaternHyper
from .oracle import dense_posterior
from .simulate import synth_benchmark
from .ssm import build_joint

DENSE_POINT_LIMIT = 500


@dataclass(frozen=True)
class TwoStageResult:
    fits: list[SeriesFit]
    samples: PosteriorSamples
    summary: PosteriorSummary

    @property
    def lengthscales(self) -> np.ndarray:
        return np.array([f.ell for f in self.fits])


def two_stage(data: MultiSeriesDataset, config: InferenceConfig) -> TwoStageResult:
    """Stage-1 MLE for length-scales, stage-2 MH for coupling and noise."""
    fits = fit_lengthscales(data, config.nu, config.stage1)
    samples = mh_sample(
        data,
        [f.ell for f in fits],
        config,
        tau2_init=np.array([f.tau2 for f in fits]),
    )
    summary = summarize(samples)
    return TwoStageResult(fits=fits, samples=samples, summary=summary)


def build_model(nu: float, ells, C: np.ndarray):
    hypers = tuple(MaternHyper(nu=nu, ell=float(e)) for e in np.asarray(ells, dtype=float))
    return build_joint(hypers, CouplingMatrix.from_covariance(np.asarray(C, dtype=float)))


def posterior_predict(
    data: MultiSeriesDataset,
    nu: float,
    ells,
    C: np.ndarray,
    tau2,
    engine: str = "ssm",
) -> PredictionTable:
    """Predict every masked entry under fixed parameters.

    engine='ssm' runs the O(N) filter/smoother; engine='dense' uses the
    quadratic reference implementation and refuses more than
    DENSE_POINT_LIMIT observed points.
    """
    model = build_model(nu, ells, C)
    if engine == "ssm":
        return predict_missing(model, data, tau2)
    if engine != "dense":
        raise ValidationError(f"engine must be 'ssm' or 'dense', got {engine!r}")
    if data.n_observed > DENSE_POINT_LIMIT:
        raise ValidationError(
            f"dense engine refuses {data.n_observed} observed points (limit {DENSE_POINT_LIMIT})"
        )
    rows_t, rows_j = np.nonzero(~data.mask)
    order = np.lexsort((rows_j, rows_t))
    rows_t, rows_j = rows_t[order], rows_j[order]
    targets = [(int(j), float(data.times[k])) for k, j in zip(rows_t, rows_j)]
    from .filter_smoother import check_tau2

    tau2 = check_tau2(tau2, data.n_series)
    means, var_latent = dense_posterior(data, targets, model.hypers, model.coupling, tau2)
    return PredictionTable(
        times=data.times[rows_t],
        series_idx=rows_j,
        labels=data.labels,
        mean=means,
        var_latent=var_latent,
        var_predictive=var_latent + tau2[rows_j],
    )


def held_out_truths(data: MultiSeriesDataset, table: PredictionTable) -> np.ndarray:
    """Truth values aligned with a prediction table's rows (NaN where the
    dataset holds no finite value under the mask)."""
    rows_t = np.searchsorted(data.times, table.times)
    return data.values[rows_t, table.series_idx]


def prediction_metrics(
    data: MultiSeriesDataset, table: PredictionTable, truths: np.ndarray
) -> dict:
    """SMSE and 2-standard-deviation coverage on finite truths.

    SMSE needs truth variance within each scored series; when some series'
    test truths are constant (e.g. a single held-out point) it is reported
    as None rather than failing the whole prediction.
    """
    finite = np.isfinite(truths)
    if not np.any(finite):
        raise ValidationError("no finite truths to score against")
    mean = table.mean[finite]
    truth = truths[finite]
    band = 2.0 * np.sqrt(table.var_predictive[finite])
    try:
        smse = compute_smse(mean, truth, table.series_idx[finite])
    except DegenerateTruth:
        smse = None
    return {
        "smse": smse,
        "coverage_2sd": float(np.mean(np.abs(truth - mean) <= band)),
        "n_test": int(finite.sum()),
    }


@dataclass(frozen=True)
class BenchmarkResult:
    data: MultiSeriesDataset
    fits: list[SeriesFit]
    samples: PosteriorSamples
    summary: PosteriorSummary
    predictions: PredictionTable
    truths: np.ndarray
    metrics: dict


def run_synth_benchmark(
    seed: int,
    config: InferenceConfig,
    n_times: int = 100,
    n_test: int = 41,
    engine: str = "ssm",
    use_last_sample: bool = False,
) -> BenchmarkResult:
    """Simulate the synthetic two-trend dataset, run both inference
    stages, predict the held-out tail of series 2 and score it."""
    data = synth_benchmark(seed, n_times=n_times, n_test=n_test)
    result = two_stage(data, config)
    C = result.summary.C_last if use_last_sample else result.summary.C_mean
    tau2 = result.summary.tau2_last if use_last_sample else result.summary.tau2_mean
    table = posterior_predict(data, config.nu, result.lengthscales, C, tau2, engine=engine)
    truths = held_out_truths(data, table)
    metrics = prediction_metrics(data, table, truths)
    model = build_model(config.nu, result.lengthscales, C)
    metrics["train_loglik"] = kalman_filter(model, data, tau2, store=False).loglik
    return BenchmarkResult(
        data=data,
        fits=result.fits,
        samples=result.samples,
        summary=result.summary,
        predictions=table,
        truths=truths,
        metrics=metrics,
    )
