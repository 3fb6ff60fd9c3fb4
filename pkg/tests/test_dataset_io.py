"""CSV/JSON/TOML artifacts: round trips, typed errors, SMSE, determinism."""

import numpy as np
import pytest

from depmatern.dataset_io import (
    PREDICTION_COLUMNS,
    compute_smse,
    config_digest,
    detect_format,
    load_run_config,
    provenance_record,
    read_dataset,
    read_json,
    read_predictions,
    write_dataset,
    write_json,
    write_predictions,
    write_truths,
)
from depmatern.errors import (
    DegenerateTruth,
    DuplicateTimestamp,
    IOFormatError,
    NonMonotoneTime,
    ValidationError,
)
from depmatern.filter_smoother import MultiSeriesDataset, PredictionTable


def sample_data():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(6, 3)).round(3)
    values[1, 0] = 0.1 + 0.2  # not exactly representable in short decimal
    mask = np.ones((6, 3), dtype=bool)
    mask[2, 1] = mask[4, 0] = mask[4, 2] = False
    return MultiSeriesDataset(
        times=np.array([0.0, 0.5, 1.25, 2.0, 3.5, 4.0]),
        values=values,
        mask=mask,
        labels=("a", "b", "c"),
    )


class TestWideFormat:
    def test_round_trip_is_exact(self, tmp_path):
        data = sample_data()
        path = tmp_path / "d.csv"
        write_dataset(path, data, fmt="wide")
        back = read_dataset(path)
        assert np.array_equal(back.times, data.times)
        assert np.array_equal(back.mask, data.mask)
        assert back.labels == data.labels
        assert np.array_equal(back.values[back.mask], data.values[data.mask])

    def test_written_bytes_are_deterministic(self, tmp_path):
        data = sample_data()
        write_dataset(tmp_path / "a.csv", data, fmt="wide")
        write_dataset(tmp_path / "b.csv", data, fmt="wide")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_detects_wide(self, tmp_path):
        path = tmp_path / "d.csv"
        write_dataset(path, sample_data(), fmt="wide")
        assert detect_format(path) == "wide"

    def test_whitespace_cells(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,a,b\n0.0, 1.5 ,  \n1.0,2.0,3.0\n")
        data = read_dataset(path)
        assert data.values[0, 0] == 1.5
        assert not data.mask[0, 1]

    def test_bad_number_names_file_and_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,a\n0.0,1.0\n1.0,oops\n")
        with pytest.raises(IOFormatError) as err:
            read_dataset(path)
        assert "d.csv:3" in str(err.value) and "oops" in str(err.value)

    def test_duplicate_and_decreasing_times(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,a\n1.0,1.0\n1.0,2.0\n")
        with pytest.raises(DuplicateTimestamp):
            read_dataset(path)
        path.write_text("time,a\n1.0,1.0\n0.5,2.0\n")
        with pytest.raises(NonMonotoneTime) as err:
            read_dataset(path)
        assert ":3" in str(err.value)

    def test_structural_errors(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("")
        with pytest.raises(IOFormatError):
            read_dataset(path)
        path.write_text("time,a\n0.0,1.0,9.0\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)
        path.write_text("time,a,a\n0.0,1.0,2.0\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)
        path.write_text("value,a\n0.0,1.0\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)
        path.write_text("time,a\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)

    def test_rejects_fully_missing_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("time,a,b\n0.0,,\n1.0,,\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IOFormatError):
            read_dataset(tmp_path / "absent.csv")


class TestLongFormat:
    def test_round_trip_matches_wide(self, tmp_path):
        data = sample_data()
        write_dataset(tmp_path / "w.csv", data, fmt="wide")
        write_dataset(tmp_path / "l.csv", data, fmt="long")
        assert detect_format(tmp_path / "l.csv") == "long"
        wide = read_dataset(tmp_path / "w.csv")
        lng = read_dataset(tmp_path / "l.csv")
        assert np.array_equal(wide.times, lng.times)
        assert wide.labels == lng.labels
        assert np.array_equal(wide.mask, lng.mask)
        assert np.array_equal(wide.values[wide.mask], lng.values[lng.mask])

    def test_duplicate_pair_rejected(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("time,series,value\n0.0,a,1.0\n0.0,a,2.0\n")
        with pytest.raises(DuplicateTimestamp) as err:
            read_dataset(path)
        assert ":3" in str(err.value)

    def test_non_monotone_rejected(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("time,series,value\n1.0,a,1.0\n0.0,b,2.0\n")
        with pytest.raises(NonMonotoneTime):
            read_dataset(path)

    def test_structural_errors(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("time,series,value\n0.0,a\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)
        path.write_text("time,series,value\n0.0,,1.0\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)
        path.write_text("time,series,value\n")
        with pytest.raises(IOFormatError):
            read_dataset(path)

    def test_same_time_different_series_is_one_row(self, tmp_path):
        path = tmp_path / "l.csv"
        path.write_text("time,series,value\n0.0,a,1.0\n0.0,b,2.0\n1.0,a,3.0\n")
        data = read_dataset(path)
        assert data.n_times == 2 and data.n_series == 2
        assert data.values[0, 1] == 2.0 and not data.mask[1, 1]


class TestTruths:
    def test_writes_only_finite_heldout_entries(self, tmp_path):
        values = np.array([[1.0, 2.0], [3.0, np.nan], [5.0, 6.0]])
        mask = np.array([[True, False], [True, False], [True, True]])
        data = MultiSeriesDataset(
            times=[0.0, 1.0, 2.0], values=values, mask=mask, labels=("x", "y")
        )
        path = tmp_path / "t.csv"
        write_truths(path, data)
        lines = path.read_text().splitlines()
        assert lines == ["time,series,value", "0.0,y,2.0"]


class TestPredictions:
    def table(self):
        return PredictionTable(
            times=np.array([0.5, 0.5, 1.5]),
            series_idx=np.array([0, 1, 1]),
            labels=("a", "b"),
            mean=np.array([0.1 + 0.2, -1.0, 2.5]),
            var_latent=np.array([0.01, 0.02, 0.03]),
            var_predictive=np.array([0.11, 0.12, 0.13]),
        )

    def test_round_trip_exact(self, tmp_path):
        table = self.table()
        path = tmp_path / "p.csv"
        write_predictions(path, table)
        back, truths = read_predictions(path)
        assert truths is None
        assert np.array_equal(back.times, table.times)
        assert np.array_equal(back.mean, table.mean)
        assert np.array_equal(back.var_latent, table.var_latent)
        assert np.array_equal(back.var_predictive, table.var_predictive)
        got = [back.labels[i] for i in back.series_idx]
        want = [table.labels[i] for i in table.series_idx]
        assert got == want

    def test_truth_column_round_trip_with_blanks(self, tmp_path):
        table = self.table()
        path = tmp_path / "p.csv"
        write_predictions(path, table, truths=np.array([1.0, np.nan, 3.0]))
        back, truths = read_predictions(path)
        assert truths is not None
        assert truths[0] == 1.0 and truths[2] == 3.0 and np.isnan(truths[1])
        assert (
            path.read_text().splitlines()[0]
            == ",".join(PREDICTION_COLUMNS) + ",observed_truth"
        )

    def test_truth_length_mismatch(self, tmp_path):
        with pytest.raises(ValidationError):
            write_predictions(tmp_path / "p.csv", self.table(), truths=[1.0])

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("time,series,mean\n")
        with pytest.raises(IOFormatError):
            read_predictions(path)
        path.write_text(",".join(PREDICTION_COLUMNS) + ",extra_column\n")
        with pytest.raises(IOFormatError):
            read_predictions(path)


class TestSMSE:
    def test_perfect_prediction_scores_zero(self):
        truths = np.array([1.0, 2.0, 3.0, 4.0])
        assert compute_smse(truths, truths, np.zeros(4, int)) == 0.0

    def test_constant_mean_predictor_scores_one(self):
        truths = np.array([1.0, 2.0, 3.0, 10.0])
        means = np.full(4, truths.mean())
        assert compute_smse(means, truths, np.zeros(4, int)) == pytest.approx(1.0)

    def test_series_are_averaged(self):
        # series 0 scores 0, series 1 scores 1 -> average 0.5
        truths = np.array([1.0, 3.0, 5.0, 9.0])
        means = np.array([1.0, 3.0, 7.0, 7.0])
        idx = np.array([0, 0, 1, 1])
        assert compute_smse(means, truths, idx) == pytest.approx(0.5)

    def test_degenerate_truth_variance(self):
        with pytest.raises(DegenerateTruth):
            compute_smse([0.0, 0.0], [2.0, 2.0], [0, 0])

    def test_input_validation(self):
        with pytest.raises(ValidationError):
            compute_smse([], [], [])
        with pytest.raises(ValidationError):
            compute_smse([1.0], [1.0, 2.0], [0, 0])
        with pytest.raises(ValidationError):
            compute_smse([1.0, 2.0], [1.0, np.nan], [0, 0])


class TestRunConfig:
    def test_loads_sections_and_defaults(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            "[stage2]\nchain_length = 500\nburn_in = 100\nseed = 7\n\n"
            "[priors]\nnoise_scale = 2.0\n"
        )
        cfg = load_run_config(path)
        assert cfg.stage2.chain_length == 500 and cfg.stage2.seed == 7
        assert cfg.priors.noise_scale == 2.0
        assert cfg.stage1.restarts == 4  # untouched section keeps defaults

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("")
        cfg = load_run_config(path)
        assert cfg.stage2.proposal_scale == 0.1

    def test_unknown_keys_are_hard_errors(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[stage2]\nchain_lenght = 500\n")
        with pytest.raises(ValidationError):
            load_run_config(path)
        path.write_text("[stagetwo]\nchain_length = 500\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_invalid_values_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[stage2]\nproposal_scale = -1.0\n")
        with pytest.raises(ValidationError):
            load_run_config(path)

    def test_bad_toml_and_missing_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[stage2\nchain_length = 1\n")
        with pytest.raises(IOFormatError):
            load_run_config(path)
        with pytest.raises(IOFormatError):
            load_run_config(tmp_path / "none.toml")


class TestJSONArtifacts:
    def test_round_trip_preserves_floats_exactly(self, tmp_path):
        payload = {"b": 0.1 + 0.2, "a": [1.5, 2.0 / 3.0], "c": {"x": 1e-300}}
        path = tmp_path / "x.json"
        write_json(path, payload)
        back = read_json(path)
        assert back["b"] == payload["b"]
        assert back["a"][1] == payload["a"][1]
        assert back["c"]["x"] == payload["c"]["x"]

    def test_key_order_does_not_change_bytes(self, tmp_path):
        write_json(tmp_path / "a.json", {"x": 1, "y": 2})
        write_json(tmp_path / "b.json", {"y": 2, "x": 1})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_read_errors(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("{nope")
        with pytest.raises(IOFormatError):
            read_json(path)
        with pytest.raises(IOFormatError):
            read_json(tmp_path / "absent.json")

    def test_config_digest_is_order_insensitive(self):
        a = config_digest({"x": 1, "y": [1, 2]})
        b = config_digest({"y": [1, 2], "x": 1})
        c = config_digest({"x": 1, "y": [2, 1]})
        assert a == b != c
        assert len(a) == 64


class TestProvenance:
    def test_record_has_no_wall_clock(self):
        data = sample_data()
        rec = provenance_record(data, seed=3, config_payload={"k": 1}, command="fit")
        assert rec["seed"] == 3 and rec["command"] == "fit"
        assert rec["n_times"] == 6 and rec["n_series"] == 3
        assert rec["time_range"] == [0.0, 4.0]
        joined = " ".join(rec).lower()
        assert "time_range" in rec and "timestamp" not in joined
        assert "date" not in joined and "duration" not in joined
