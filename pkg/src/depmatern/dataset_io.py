"""File formats: dataset CSV (wide and long), predictions CSV, JSON
artifacts, TOML run configuration, and the SMSE metric.

All numeric text is written with Python's shortest round-trip float
repr and JSON objects with sorted keys, so identical inputs produce
byte-identical files. Nothing in this module writes wall-clock time.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict
from pydantic import ValidationError as PydanticValidationError

from .errors import (
    DegenerateTruth,
    DuplicateTimestamp,
    IOFormatError,
    NonMonotoneTime,
    ValidationError,
)
from .filter_smoother import MultiSeriesDataset, PredictionTable
from .inference import PriorConfig, Stage1Config, Stage2Config

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(cell: str, path: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise IOFormatError(f"{path}:{line}: cannot parse {cell!r} as a number") from None


def _read_rows(path: str | Path) -> list[list[str]]:
    p = Path(path)
    if not p.exists():
        raise IOFormatError(f"no such file: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh)]
    if not rows:
        raise IOFormatError(f"{p}: empty file")
    return rows


def detect_format(path: str | Path) -> str:
    """'long' iff the header is exactly time,series,value; else 'wide'."""
    header = _read_rows(path)[0]
    if [h.strip() for h in header] == ["time", "series", "value"]:
        return "long"
    return "wide"


def read_dataset(path: str | Path, fmt: str = "auto") -> MultiSeriesDataset:
    """Load a dataset CSV.

    Wide: header `time,<label>,...`, one row per timestamp, empty cell =
    missing. Long: header `time,series,value`, one row per observed
    entry, rows sorted by time. Times must be strictly increasing
    (wide) / non-decreasing with no repeated (time, series) pair (long),
    and at least one entry must be observed.
    """
    if fmt == "auto":
        fmt = detect_format(path)
    if fmt not in ("wide", "long"):
        raise ValidationError(f"format must be wide, long or auto, got {fmt!r}")
    rows = _read_rows(path)
    data = _read_wide(rows, str(path)) if fmt == "wide" else _read_long(rows, str(path))
    if data.n_observed == 0:
        raise IOFormatError(f"{path}: dataset has no observed entries")
    return data


def _read_wide(rows: list[list[str]], path: str) -> MultiSeriesDataset:
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "time":
        raise IOFormatError(f"{path}:1: wide header must be time,<label>,... got {header}")
    labels = tuple(header[1:])
    if len(set(labels)) != len(labels):
        raise IOFormatError(f"{path}:1: duplicate series labels in header")
    times, values, mask = [], [], []
    prev = None
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IOFormatError(f"{path}:{ln}: expected {len(header)} cells, got {len(row)}")
        t = _parse_float(row[0], path, ln)
        if prev is not None:
            if t == prev:
                raise DuplicateTimestamp(f"{path}:{ln}: timestamp {t!r} repeated")
            if t < prev:
                raise NonMonotoneTime(f"{path}:{ln}: timestamp {t!r} after {prev!r}")
        prev = t
        vrow, mrow = [], []
        for cell in row[1:]:
            cell = cell.strip()
            if cell == "":
                vrow.append(np.nan)
                mrow.append(False)
            else:
                vrow.append(_parse_float(cell, path, ln))
                mrow.append(True)
        times.append(t)
        values.append(vrow)
        mask.append(mrow)
    if not times:
        raise IOFormatError(f"{path}: no data rows")
    return MultiSeriesDataset(
        times=np.array(times), values=np.array(values), mask=np.array(mask), labels=labels
    )


def _read_long(rows: list[list[str]], path: str) -> MultiSeriesDataset:
    entries: dict[tuple[float, str], float] = {}
    times_order: list[float] = []
    labels_order: list[str] = []
    prev = None
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise IOFormatError(f"{path}:{ln}: expected 3 cells, got {len(row)}")
        t = _parse_float(row[0], path, ln)
        label = row[1].strip()
        if not label:
            raise IOFormatError(f"{path}:{ln}: empty series label")
        value = _parse_float(row[2], path, ln)
        if prev is not None and t < prev:
            raise NonMonotoneTime(f"{path}:{ln}: timestamp {t!r} after {prev!r}")
        prev = t
        if (t, label) in entries:
            raise DuplicateTimestamp(f"{path}:{ln}: duplicate entry for time {t!r}, series {label!r}")
        entries[(t, label)] = value
        if not times_order or times_order[-1] != t:
            times_order.append(t)
        if label not in labels_order:
            labels_order.append(label)
    if not entries:
        raise IOFormatError(f"{path}: no data rows")
    times = np.array(times_order)
    values = np.full((times.size, len(labels_order)), np.nan)
    mask = np.zeros(values.shape, dtype=bool)
    t_idx = {t: k for k, t in enumerate(times_order)}
    j_idx = {lab: j for j, lab in enumerate(labels_order)}
    for (t, lab), v in entries.items():
        values[t_idx[t], j_idx[lab]] = v
        mask[t_idx[t], j_idx[lab]] = True
    return MultiSeriesDataset(
        times=times, values=values, mask=mask, labels=tuple(labels_order)
    )


def write_dataset(path: str | Path, data: MultiSeriesDataset, fmt: str = "wide") -> None:
    """Write the observed view of a dataset (masked entries are blank in
    wide format, absent in long format)."""
    if fmt not in ("wide", "long"):
        raise ValidationError(f"format must be wide or long, got {fmt!r}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if fmt == "wide":
            writer.writerow(["time", *data.labels])
            for k in range(data.n_times):
                row = [_fmt(data.times[k])]
                for j in range(data.n_series):
                    row.append(_fmt(data.values[k, j]) if data.mask[k, j] else "")
                writer.writerow(row)
        else:
            writer.writerow(["time", "series", "value"])
            for k in range(data.n_times):
                for j in range(data.n_series):
                    if data.mask[k, j]:
                        writer.writerow(
                            [_fmt(data.times[k]), data.labels[j], _fmt(data.values[k, j])]
                        )


def write_truths(path: str | Path, data: MultiSeriesDataset) -> None:
    """Write held-out true values (finite entries under mask=False) in
    long format, for later scoring with `predict --truth`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "series", "value"])
        for k in range(data.n_times):
            for j in range(data.n_series):
                if not data.mask[k, j] and np.isfinite(data.values[k, j]):
                    writer.writerow([_fmt(data.times[k]), data.labels[j], _fmt(data.values[k, j])])


PREDICTION_COLUMNS = ["time", "series", "mean", "var_latent", "var_predictive"]


def write_predictions(
    path: str | Path, table: PredictionTable, truths: np.ndarray | None = None
) -> None:
    """Write predictions sorted by (time, series); adds an observed_truth
    column when truths are given (NaN entries left blank)."""
    header = list(PREDICTION_COLUMNS)
    if truths is not None:
        truths = np.asarray(truths, dtype=float).ravel()
        if truths.size != table.n_rows:
            raise ValidationError(f"{truths.size} truths for {table.n_rows} predictions")
        header.append("observed_truth")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(table.n_rows):
            row = [
                _fmt(table.times[k]),
                table.labels[int(table.series_idx[k])],
                _fmt(table.mean[k]),
                _fmt(table.var_latent[k]),
                _fmt(table.var_predictive[k]),
            ]
            if truths is not None:
                row.append(_fmt(truths[k]) if np.isfinite(truths[k]) else "")
            writer.writerow(row)


def read_predictions(path: str | Path) -> tuple[PredictionTable, np.ndarray | None]:
    """Inverse of `write_predictions`; labels are in order of first
    appearance, which preserves row-level round trips."""
    rows = _read_rows(path)
    header = rows[0]
    if header[: len(PREDICTION_COLUMNS)] != PREDICTION_COLUMNS:
        raise IOFormatError(f"{path}:1: unexpected predictions header {header}")
    has_truth = header[len(PREDICTION_COLUMNS) :] == ["observed_truth"]
    if not has_truth and len(header) != len(PREDICTION_COLUMNS):
        raise IOFormatError(f"{path}:1: unexpected predictions header {header}")
    labels: list[str] = []
    times, series_idx, mean, v_lat, v_pred, truths = [], [], [], [], [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IOFormatError(f"{path}:{ln}: expected {len(header)} cells, got {len(row)}")
        times.append(_parse_float(row[0], str(path), ln))
        label = row[1]
        if label not in labels:
            labels.append(label)
        series_idx.append(labels.index(label))
        mean.append(_parse_float(row[2], str(path), ln))
        v_lat.append(_parse_float(row[3], str(path), ln))
        v_pred.append(_parse_float(row[4], str(path), ln))
        if has_truth:
            truths.append(np.nan if row[5] == "" else _parse_float(row[5], str(path), ln))
    table = PredictionTable(
        times=np.array(times, dtype=float),
        series_idx=np.array(series_idx, dtype=int),
        labels=tuple(labels),
        mean=np.array(mean, dtype=float),
        var_latent=np.array(v_lat, dtype=float),
        var_predictive=np.array(v_pred, dtype=float),
    )
    return table, (np.array(truths, dtype=float) if has_truth else None)


def compute_smse(means: np.ndarray, truths: np.ndarray, series_idx: np.ndarray) -> float:
    """Standardized mean squared error, averaged over series.

    Per series with test points: MSE / population variance of that
    series' test truths. A constant predictor at the test mean scores 1.
    """
    means = np.asarray(means, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    series_idx = np.asarray(series_idx, dtype=int).ravel()
    if not (means.size == truths.size == series_idx.size):
        raise ValidationError("means, truths and series_idx must have equal length")
    if means.size == 0:
        raise ValidationError("no test points")
    if not np.all(np.isfinite(truths)):
        raise ValidationError("truths must be finite")
    per_series = []
    for j in np.unique(series_idx):
        sel = series_idx == j
        var = float(np.var(truths[sel]))
        if var == 0.0:
            raise DegenerateTruth(f"test truths for series index {j} have zero variance")
        per_series.append(float(np.mean((means[sel] - truths[sel]) ** 2)) / var)
    return float(np.mean(per_series))


class RunConfig(BaseModel):
    """Optional TOML run configuration: [stage1], [stage2], [priors].

    nu and the coupling rank never come from a file; they are explicit
    flags. Unknown keys anywhere are hard errors.
    """

    model_config = ConfigDict(extra="forbid")

    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    priors: PriorConfig = PriorConfig()


def load_run_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise IOFormatError(f"no such file: {p}")
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise IOFormatError(f"{p}: invalid TOML: {exc}") from None
    try:
        return RunConfig.model_validate(raw)
    except PydanticValidationError as exc:
        raise ValidationError(f"{p}: invalid configuration: {exc}") from None


def write_json(path: str | Path, payload) -> None:
    """Canonical JSON artifact: sorted keys, two-space indent, newline."""
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def read_json(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise IOFormatError(f"no such file: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise IOFormatError(f"{p}: invalid JSON: {exc}") from None


def config_digest(payload) -> str:
    """sha256 over the canonical JSON encoding of a config payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunArtifacts:
    """Paths written by a run plus its provenance record.

    Provenance carries the seed, a config digest, the package version
    and the data's shape/time range. Wall-clock time is deliberately
    absent so reruns with the same inputs are byte-identical; timing is
    reported on stderr instead.
    """

    out_dir: Path
    files: dict[str, Path]
    provenance: dict


def provenance_record(
    data: MultiSeriesDataset, seed: int | None, config_payload: dict, command: str
) -> dict:
    from . import __version__

    return {
        "package": "depmatern",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_sha256": config_digest(config_payload),
        "n_times": data.n_times,
        "n_series": data.n_series,
        "n_observed": data.n_observed,
        "time_range": [float(data.times[0]), float(data.times[-1])],
    }
