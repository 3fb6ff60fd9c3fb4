"""Command-line interface.

Every data-touching subcommand is a thin client of the HTTP service:
by default requests go to an in-process instance of the app (same
serialization, routing and validation as a deployed one); --server
points them at a remote host instead. Results land in files or on
stdout; progress and timing go to stderr so outputs stay byte-stable.

Exit codes: 0 ok, 2 validation, 3 numeric failure, 4 file/format error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dataset_io
from .errors import (
    DepMaternError,
    IOFormatError,
    NumericError,
    ValidationError,
    exit_code_for,
)
from .filter_smoother import MultiSeriesDataset, PredictionTable


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


class ServiceClient:
    """POST JSON to the service; in-process app unless --server is given."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                # some starlette versions warn about their own test client;
                # keep third-party noise off the CLI's stderr
                warnings.simplefilter("ignore")
                from starlette.testclient import TestClient

            from .service.app import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code == 200:
            return response.json()
        raise _error_from_response(response)


def _error_from_response(response) -> DepMaternError:
    try:
        body = response.json()
    except Exception:
        return NumericError(f"service returned HTTP {response.status_code}: {response.text[:500]}")
    if "error" in body:
        info = body["error"]
        cls = {"validation": ValidationError, "numeric": NumericError, "io": IOFormatError}.get(
            info.get("category"), NumericError
        )
        message = info.get("message", "")
        type_name = info.get("type", "error")
        # keep the service's exception name only when it adds information
        if type_name != cls.__name__:
            message = f"{type_name}: {message}"
        return cls(message)
    if "detail" in body:  # request-body validation from the framework
        return ValidationError(f"invalid request: {body['detail']}")
    return NumericError(f"service returned HTTP {response.status_code}")


def _dataset_payload(data: MultiSeriesDataset) -> dict:
    from .service.schemas import DatasetPayload

    return DatasetPayload.from_dataset(data).model_dump()


def _merge_truths(data: MultiSeriesDataset, truth_path: str) -> MultiSeriesDataset:
    """Attach held-out truths (long CSV) to masked entries for scoring.

    Times must match the dataset's parsed values exactly; unmatched or
    observed entries are errors.
    """
    rows = dataset_io._read_rows(truth_path)
    if [h.strip() for h in rows[0]] != ["time", "series", "value"]:
        raise IOFormatError(f"{truth_path}:1: truth file must have header time,series,value")
    values = data.values.copy()
    label_idx = {lab: j for j, lab in enumerate(data.labels)}
    time_idx = {float(t): k for k, t in enumerate(data.times)}
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise IOFormatError(f"{truth_path}:{ln}: expected 3 cells, got {len(row)}")
        t = dataset_io._parse_float(row[0], truth_path, ln)
        label = row[1].strip()
        value = dataset_io._parse_float(row[2], truth_path, ln)
        if t not in time_idx:
            raise IOFormatError(f"{truth_path}:{ln}: time {row[0]} not in the dataset grid")
        if label not in label_idx:
            raise IOFormatError(f"{truth_path}:{ln}: unknown series {label!r}")
        k, j = time_idx[t], label_idx[label]
        if data.mask[k, j]:
            raise IOFormatError(
                f"{truth_path}:{ln}: entry (time {row[0]}, series {label!r}) is observed, not held out"
            )
        values[k, j] = value
    return MultiSeriesDataset(times=data.times, values=values, mask=data.mask, labels=data.labels)


def _rows_to_table(rows: list[dict]) -> tuple[PredictionTable, np.ndarray | None]:
    labels: list[str] = []
    idx = []
    for r in rows:
        if r["series"] not in labels:
            labels.append(r["series"])
        idx.append(labels.index(r["series"]))
    truths = np.array(
        [np.nan if r.get("observed_truth") is None else r["observed_truth"] for r in rows]
    )
    table = PredictionTable(
        times=np.array([r["time"] for r in rows], dtype=float),
        series_idx=np.array(idx, dtype=int),
        labels=tuple(labels) if labels else ("none",),
        mean=np.array([r["mean"] for r in rows], dtype=float),
        var_latent=np.array([r["var_latent"] for r in rows], dtype=float),
        var_predictive=np.array([r["var_predictive"] for r in rows], dtype=float),
    )
    return table, (truths if np.any(np.isfinite(truths)) else None)


def _load_config(path: str | None) -> dataset_io.RunConfig:
    if path is None:
        return dataset_io.RunConfig()
    return dataset_io.load_run_config(path)


def _stage2_payload(cfg: dataset_io.RunConfig, args) -> dict:
    stage2 = cfg.stage2.model_dump()
    for flag, key in (
        ("chain_length", "chain_length"),
        ("burn_in", "burn_in"),
        ("seed", "seed"),
        ("proposal_scale", "proposal_scale"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            stage2[key] = value
    return stage2


# ---------------------------------------------------------------- commands


def _cmd_simulate(args) -> int:
    params = dataset_io.read_json(args.model)
    if args.times:
        times = [float(x) for x in args.times.split(",")]
        payload = {"model": params, "seed": args.seed, "times": times}
    else:
        try:
            n, start, stop = args.grid.split(":")
            grid = {"n": int(n), "start": float(start), "stop": float(stop)}
        except ValueError:
            raise ValidationError(f"--grid must be N:START:STOP, got {args.grid!r}") from None
        payload = {"model": params, "seed": args.seed, "grid": grid}
    result = ServiceClient(args.server).post("/simulate", payload)
    from .service.schemas import DatasetPayload

    data = DatasetPayload.model_validate(result["dataset"]).to_dataset()
    dataset_io.write_dataset(args.out, data, fmt=args.format)
    _log(f"wrote {data.n_times} timestamps x {data.n_series} series to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    data = dataset_io.read_dataset(args.data, fmt=args.format)
    cfg = _load_config(args.config)
    payload = {
        "dataset": _dataset_payload(data),
        "nu": args.nu,
        "stage1": cfg.stage1.model_dump(),
    }
    start = time.perf_counter()
    result = ServiceClient(args.server).post("/fit", payload)
    _log(f"stage 1 finished in {time.perf_counter() - start:.1f}s")
    dataset_io.write_json(args.out, result)
    for series in result["series"]:
        flag = "  [noise-dominated]" if series["noise_dominated"] else ""
        _log(
            f"  {series['label']}: ell={series['ell']:.6g} sigma2={series['sigma2']:.6g} "
            f"tau2={series['tau2']:.6g}{flag}"
        )
    return 0


def _cmd_sample(args) -> int:
    if args.chain_length is not None and args.chain_length < 1:
        raise ValidationError("--chain-length must be a positive integer")
    data = dataset_io.read_dataset(args.data, fmt=args.format)
    fit = dataset_io.read_json(args.fit)
    if "series" not in fit or "nu" not in fit:
        raise IOFormatError(f"{args.fit}: not a fit artifact (missing nu/series)")
    cfg = _load_config(args.config)
    payload = {
        "dataset": _dataset_payload(data),
        "nu": fit["nu"],
        "rank": args.rank,
        "lengthscales": [s["ell"] for s in fit["series"]],
        "tau2_init": [s["tau2"] for s in fit["series"]],
        "stage2": _stage2_payload(cfg, args),
        "priors": cfg.priors.model_dump(),
    }
    start = time.perf_counter()
    result = ServiceClient(args.server).post("/sample", payload)
    posterior = result["posterior"]
    _log(
        f"chain of {posterior['n_draws'] + posterior['burn_in']} iterations in "
        f"{time.perf_counter() - start:.1f}s (acceptance "
        f"{posterior['acceptance_rate']:.3f})"
        if posterior["acceptance_rate"] is not None
        else "chain finished"
    )
    dataset_io.write_json(args.out, posterior)
    return 0


def _cmd_predict(args) -> int:
    data = dataset_io.read_dataset(args.data, fmt=args.format)
    if args.truth:
        data = _merge_truths(data, args.truth)
    payload = {
        "dataset": _dataset_payload(data),
        "engine": args.engine,
        "use_last_sample": args.use_last_sample,
    }
    if args.posterior:
        payload["posterior"] = dataset_io.read_json(args.posterior)
    if args.model:
        payload["model"] = dataset_io.read_json(args.model)
    if (args.posterior is None) == (args.model is None):
        raise ValidationError("provide exactly one of --posterior or --model")
    result = ServiceClient(args.server).post("/predict", payload)
    table, truths = _rows_to_table(result["rows"])
    dataset_io.write_predictions(args.out, table, truths)
    _log(f"wrote {table.n_rows} predictions to {args.out}")
    if result.get("metrics"):
        metrics = result["metrics"]
        print(f"smse={metrics['smse']!r} coverage_2sd={metrics['coverage_2sd']!r} n_test={metrics['n_test']}")
    return 0


def _cmd_corr(args) -> int:
    posterior = dataset_io.read_json(args.posterior)
    for key in ("labels", "rho_mean", "rho_lower", "rho_upper"):
        if key not in posterior:
            raise IOFormatError(f"{args.posterior}: not a posterior artifact (missing {key})")
    labels = posterior["labels"]
    rho = np.array(posterior["rho_mean"])
    lo = np.array(posterior["rho_lower"])
    hi = np.array(posterior["rho_upper"])
    width = max(len(l) for l in labels)
    print("posterior mean correlation:")
    header = " " * (width + 2) + "  ".join(f"{l:>8}" for l in labels)
    print(header)
    for i, lab in enumerate(labels):
        row = "  ".join(f"{rho[i, j]:8.4f}" for j in range(len(labels)))
        print(f"{lab:>{width}}  {row}")
    if len(labels) > 1:
        print("95% intervals (off-diagonal):")
        for i in range(len(labels)):
            for j in range(i + 1, len(labels)):
                print(
                    f"  {labels[i]} ~ {labels[j]}: "
                    f"{rho[i, j]:.4f} in [{lo[i, j]:.4f}, {hi[i, j]:.4f}]"
                )
    return 0


def _cmd_bench_synth(args) -> int:
    cfg = _load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": args.seed,
        "nu": args.nu,
        "rank": args.rank,
        "engine": args.engine,
        "use_last_sample": args.use_last_sample,
        "stage1": cfg.stage1.model_dump(),
        "stage2": _stage2_payload(cfg, args),
        "priors": cfg.priors.model_dump(),
    }
    start = time.perf_counter()
    result = ServiceClient(args.server).post("/benchmark/synthetic", payload)
    _log(f"benchmark pipeline finished in {time.perf_counter() - start:.1f}s")
    from .service.schemas import DatasetPayload

    data = DatasetPayload.model_validate(result["dataset"]).to_dataset()
    files = {
        "dataset": out_dir / "dataset.csv",
        "truth": out_dir / "truth.csv",
        "fit": out_dir / "fit.json",
        "posterior": out_dir / "posterior.json",
        "predictions": out_dir / "predictions.csv",
        "metrics": out_dir / "metrics.json",
        "provenance": out_dir / "provenance.json",
    }
    dataset_io.write_dataset(files["dataset"], data)
    dataset_io.write_truths(files["truth"], data)
    dataset_io.write_json(files["fit"], result["fit"])
    dataset_io.write_json(files["posterior"], result["posterior"])
    table, truths = _rows_to_table(result["predictions"])
    dataset_io.write_predictions(files["predictions"], table, truths)
    dataset_io.write_json(files["metrics"], result["metrics"])
    dataset_io.write_json(files["provenance"], result["provenance"])
    metrics = result["metrics"]
    print(
        f"smse={metrics['smse']!r} coverage_2sd={metrics['coverage_2sd']!r} "
        f"n_test={metrics['n_test']}"
    )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depmatern",
        description="Coupled Matern processes: simulate, fit, sample, predict.",
    )
    parser.add_argument("--version", action="version", version=f"depmatern {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", default=None, help="remote service URL (default: in-process)")

    p = sub.add_parser("simulate", help="simulate a dataset from explicit model parameters")
    p.add_argument("--model", required=True, help="model JSON (nu, lengthscales, L or C, tau2)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--grid", help="N:START:STOP equally spaced timestamps")
    group.add_argument("--times", help="comma-separated timestamps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("wide", "long"), default="wide")
    add_server(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="stage 1: per-series length-scale MLE")
    p.add_argument("--data", required=True)
    p.add_argument("--nu", type=float, required=True, help="Matern smoothness: 0.5, 1.5 or 2.5")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("auto", "wide", "long"), default="auto")
    p.add_argument("--config", default=None, help="TOML run configuration")
    add_server(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("sample", help="stage 2: MH over the coupling matrix and noise")
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True, help="fit.json from the fit command")
    p.add_argument("--rank", "-R", type=int, required=True, help="number of noise channels R")
    p.add_argument("--chain-length", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--proposal-scale", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("auto", "wide", "long"), default="auto")
    p.add_argument("--config", default=None)
    add_server(p)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("predict", help="posterior prediction of masked entries")
    p.add_argument("--data", required=True)
    p.add_argument("--posterior", default=None, help="posterior.json from sample")
    p.add_argument("--model", default=None, help="explicit model JSON instead of a posterior")
    p.add_argument("--engine", choices=("ssm", "dense"), default="ssm")
    p.add_argument("--use-last-sample", action="store_true")
    p.add_argument("--truth", default=None, help="held-out truths (long CSV) for scoring")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("auto", "wide", "long"), default="auto")
    add_server(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("corr", help="print the posterior correlation matrix")
    p.add_argument("--posterior", required=True)
    p.set_defaults(func=_cmd_corr)

    p = sub.add_parser("bench-synth", help="synthetic two-series benchmark, end to end")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--rank", "-R", type=int, default=2)
    p.add_argument("--chain-length", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--proposal-scale", type=float, default=None)
    p.add_argument("--engine", choices=("ssm", "dense"), default="ssm")
    p.add_argument("--use-last-sample", action="store_true")
    p.add_argument("--config", default=None)
    add_server(p)
    p.set_defaults(func=_cmd_bench_synth)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DepMaternError as exc:
        print(f"error ({exc.category}): {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
