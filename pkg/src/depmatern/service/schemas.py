"""Request/response models for the HTTP service.

These mirror the on-disk artifact formats: DatasetPayload carries a
dataset the way the CSV formats do (null value = missing, and a mask
that may hide known truths for scoring), PosteriorPayload is the
content of posterior.json.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ValidationError
from ..filter_smoother import MultiSeriesDataset, PredictionTable
from ..inference import (
    InferenceConfig,
    PosteriorSummary,
    PriorConfig,
    SeriesFit,
    Stage1Config,
    Stage2Config,
)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetPayload(StrictModel):
    times: list[float]
    values: list[list[float | None]]
    labels: list[str] | None = None
    mask: list[list[bool]] | None = None

    def to_dataset(self) -> MultiSeriesDataset:
        values = np.array(
            [[np.nan if v is None else float(v) for v in row] for row in self.values],
            dtype=float,
        )
        if values.ndim != 2:
            raise ValidationError("values must be a rectangular table")
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
        else:
            mask = np.isfinite(values)
        return MultiSeriesDataset(
            times=np.array(self.times, dtype=float),
            values=values,
            mask=mask,
            labels=tuple(self.labels) if self.labels else (),
        )

    @classmethod
    def from_dataset(cls, data: MultiSeriesDataset) -> "DatasetPayload":
        values = [
            [float(v) if np.isfinite(v) else None for v in row] for row in data.values
        ]
        return cls(
            times=[float(t) for t in data.times],
            values=values,
            labels=list(data.labels),
            mask=[[bool(m) for m in row] for row in data.mask],
        )


class ModelParamsPayload(StrictModel):
    """Explicit model parameters: exactly one of L (p x R) or C (p x p)."""

    nu: float
    lengthscales: list[float]
    tau2: list[float]
    L: list[list[float]] | None = None
    C: list[list[float]] | None = None

    @model_validator(mode="after")
    def _one_coupling(self) -> "ModelParamsPayload":
        if (self.L is None) == (self.C is None):
            raise ValueError("provide exactly one of L or C")
        return self

    def coupling_array(self) -> np.ndarray:
        if self.L is not None:
            L = np.array(self.L, dtype=float)
            return L @ L.T
        return np.array(self.C, dtype=float)


class GridSpec(StrictModel):
    n: int = Field(ge=1)
    start: float
    stop: float

    def to_times(self) -> np.ndarray:
        if not self.stop > self.start:
            raise ValidationError("grid stop must exceed start")
        return np.linspace(self.start, self.stop, self.n)


class SimulateRequest(StrictModel):
    model: ModelParamsPayload
    seed: int = 0
    times: list[float] | None = None
    grid: GridSpec | None = None

    @model_validator(mode="after")
    def _one_time_source(self) -> "SimulateRequest":
        if (self.times is None) == (self.grid is None):
            raise ValueError("provide exactly one of times or grid")
        return self


class SimulateResponse(StrictModel):
    dataset: DatasetPayload


class SeriesFitPayload(StrictModel):
    label: str
    ell: float
    sigma2: float
    tau2: float
    loglik: float
    n_obs: int
    noise_dominated: bool

    @classmethod
    def from_fit(cls, fit: SeriesFit) -> "SeriesFitPayload":
        return cls(**fit.__dict__)


class FitRequest(StrictModel):
    dataset: DatasetPayload
    nu: float
    stage1: Stage1Config = Stage1Config()


class FitResponse(StrictModel):
    nu: float
    series: list[SeriesFitPayload]


class SampleRequest(StrictModel):
    dataset: DatasetPayload
    nu: float
    rank: int = Field(ge=1)
    lengthscales: list[float]
    tau2_init: list[float] | None = None
    stage2: Stage2Config = Stage2Config()
    priors: PriorConfig = PriorConfig()


class PosteriorPayload(StrictModel):
    """Contents of posterior.json: enough to rebuild the fitted model."""

    nu: float
    rank: int
    labels: list[str]
    lengthscales: list[float]
    C_mean: list[list[float]]
    C_last: list[list[float]]
    rho_mean: list[list[float]]
    rho_lower: list[list[float]]
    rho_upper: list[list[float]]
    tau2_mean: list[float]
    tau2_last: list[float]
    acceptance_rate: float | None
    n_draws: int
    burn_in: int
    seed: int

    @classmethod
    def build(
        cls,
        summary: PosteriorSummary,
        nu: float,
        rank: int,
        labels: tuple[str, ...],
        lengthscales,
        burn_in: int,
        seed: int,
    ) -> "PosteriorPayload":
        mat = lambda a: [[float(x) for x in row] for row in np.asarray(a)]
        vec = lambda a: [float(x) for x in np.asarray(a).ravel()]
        return cls(
            nu=nu,
            rank=rank,
            labels=list(labels),
            lengthscales=vec(lengthscales),
            C_mean=mat(summary.C_mean),
            C_last=mat(summary.C_last),
            rho_mean=mat(summary.rho_mean),
            rho_lower=mat(summary.rho_lower),
            rho_upper=mat(summary.rho_upper),
            tau2_mean=vec(summary.tau2_mean),
            tau2_last=vec(summary.tau2_last),
            acceptance_rate=(
                None if summary.acceptance_rate is None else float(summary.acceptance_rate)
            ),
            n_draws=summary.n_draws,
            burn_in=burn_in,
            seed=seed,
        )


class SampleResponse(StrictModel):
    posterior: PosteriorPayload


class PredictRequest(StrictModel):
    dataset: DatasetPayload
    engine: str = "ssm"
    use_last_sample: bool = False
    posterior: PosteriorPayload | None = None
    model: ModelParamsPayload | None = None

    @model_validator(mode="after")
    def _one_source(self) -> "PredictRequest":
        if (self.posterior is None) == (self.model is None):
            raise ValueError("provide exactly one of posterior or model")
        return self


class PredictionRowPayload(StrictModel):
    time: float
    series: str
    mean: float
    var_latent: float
    var_predictive: float
    observed_truth: float | None = None


class PredictResponse(StrictModel):
    rows: list[PredictionRowPayload]
    metrics: dict | None = None


def prediction_rows(
    table: PredictionTable, truths: np.ndarray | None
) -> list[PredictionRowPayload]:
    rows = []
    for k in range(table.n_rows):
        truth = None
        if truths is not None and np.isfinite(truths[k]):
            truth = float(truths[k])
        rows.append(
            PredictionRowPayload(
                time=float(table.times[k]),
                series=table.labels[int(table.series_idx[k])],
                mean=float(table.mean[k]),
                var_latent=float(table.var_latent[k]),
                var_predictive=float(table.var_predictive[k]),
                observed_truth=truth,
            )
        )
    return rows


class BenchSynthRequest(StrictModel):
    seed: int = 0
    nu: float = 0.5
    rank: int = Field(default=2, ge=1)
    n_times: int = Field(default=100, ge=2)
    n_test: int = Field(default=41, ge=1)
    engine: str = "ssm"
    use_last_sample: bool = False
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    priors: PriorConfig = PriorConfig()

    def to_config(self) -> InferenceConfig:
        return InferenceConfig(
            nu=self.nu,
            rank=self.rank,
            stage1=self.stage1,
            stage2=self.stage2,
            priors=self.priors,
        )


class BenchSynthResponse(StrictModel):
    dataset: DatasetPayload
    fit: FitResponse
    posterior: PosteriorPayload
    predictions: list[PredictionRowPayload]
    metrics: dict
    provenance: dict
