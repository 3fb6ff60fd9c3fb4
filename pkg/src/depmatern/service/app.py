"""FastAPI wrapper around the library; every route is a pure function of
its request body. Package errors map to HTTP: validation to 422,
numeric/io failures to 500, always as {"error": {category, type, message}}."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, pipeline
from ..errors import DepMaternError
from ..filter_smoother import check_tau2
from ..inference import InferenceConfig, fit_lengthscales, mh_sample, summarize
from ..kernels import CouplingMatrix, MaternHyper
from ..simulate import sample_path
from ..ssm import build_joint
from . import schemas
from ..dataset_io import provenance_record


def create_app() -> FastAPI:
    app = FastAPI(title="depmatern", version=__version__)

    @app.exception_handler(DepMaternError)
    async def _package_error(_: Request, exc: DepMaternError) -> JSONResponse:
        status = 422 if exc.category == "validation" else 500
        return JSONResponse(
            status_code=status,
            content={
                "error": {
                    "category": exc.category,
                    "type": type(exc).__name__,
                    "message": str(exc),
                }
            },
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/simulate")
    def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
        params = req.model
        hypers = tuple(MaternHyper(nu=params.nu, ell=e) for e in params.lengthscales)
        model = build_joint(hypers, CouplingMatrix.from_covariance(params.coupling_array()))
        tau2 = check_tau2(np.array(params.tau2), model.n_series)
        times = np.array(req.times) if req.times is not None else req.grid.to_times()
        data = sample_path(model, times, tau2, req.seed)
        return schemas.SimulateResponse(dataset=schemas.DatasetPayload.from_dataset(data))

    @app.post("/fit")
    def fit(req: schemas.FitRequest) -> schemas.FitResponse:
        data = req.dataset.to_dataset()
        fits = fit_lengthscales(data, req.nu, req.stage1)
        return schemas.FitResponse(
            nu=req.nu, series=[schemas.SeriesFitPayload.from_fit(f) for f in fits]
        )

    @app.post("/sample")
    def sample(req: schemas.SampleRequest) -> schemas.SampleResponse:
        data = req.dataset.to_dataset()
        config = InferenceConfig(
            nu=req.nu, rank=req.rank, stage2=req.stage2, priors=req.priors
        )
        samples = mh_sample(
            data,
            req.lengthscales,
            config,
            tau2_init=None if req.tau2_init is None else np.array(req.tau2_init),
        )
        summary = summarize(samples)
        posterior = schemas.PosteriorPayload.build(
            summary,
            nu=req.nu,
            rank=req.rank,
            labels=data.labels,
            lengthscales=req.lengthscales,
            burn_in=samples.burn_in,
            seed=samples.seed,
        )
        return schemas.SampleResponse(posterior=posterior)

    @app.post("/predict")
    def predict(req: schemas.PredictRequest) -> schemas.PredictResponse:
        data = req.dataset.to_dataset()
        if req.posterior is not None:
            post = req.posterior
            nu, ells = post.nu, post.lengthscales
            C = np.array(post.C_last if req.use_last_sample else post.C_mean)
            tau2 = np.array(post.tau2_last if req.use_last_sample else post.tau2_mean)
        else:
            params = req.model
            nu, ells = params.nu, params.lengthscales
            C = params.coupling_array()
            tau2 = np.array(params.tau2)
        table = pipeline.posterior_predict(data, nu, ells, C, tau2, engine=req.engine)
        truths = pipeline.held_out_truths(data, table)
        metrics = None
        if np.any(np.isfinite(truths)):
            metrics = pipeline.prediction_metrics(data, table, truths)
        return schemas.PredictResponse(
            rows=schemas.prediction_rows(table, truths), metrics=metrics
        )

    @app.post("/benchmark/synthetic")
    def benchmark_synthetic(req: schemas.BenchSynthRequest) -> schemas.BenchSynthResponse:
        config = req.to_config()
        result = pipeline.run_synth_benchmark(
            req.seed,
            config,
            n_times=req.n_times,
            n_test=req.n_test,
            engine=req.engine,
            use_last_sample=req.use_last_sample,
        )
        posterior = schemas.PosteriorPayload.build(
            result.summary,
            nu=config.nu,
            rank=config.rank,
            labels=result.data.labels,
            lengthscales=[f.ell for f in result.fits],
            burn_in=result.samples.burn_in,
            seed=result.samples.seed,
        )
        provenance = provenance_record(
            result.data,
            seed=req.seed,
            config_payload=req.model_dump(),
            command="bench-synth",
        )
        return schemas.BenchSynthResponse(
            dataset=schemas.DatasetPayload.from_dataset(result.data),
            fit=schemas.FitResponse(
                nu=config.nu,
                series=[schemas.SeriesFitPayload.from_fit(f) for f in result.fits],
            ),
            posterior=posterior,
            predictions=schemas.prediction_rows(result.predictions, result.truths),
            metrics=result.metrics,
            provenance=provenance,
        )

    return app
