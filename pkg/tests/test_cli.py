"""Command-line flows end to end: artifacts on disk, exit codes, stdout."""

import numpy as np
import pytest

from depmatern import __version__, cli, dataset_io
from depmatern.filter_smoother import MultiSeriesDataset

MODEL = {
    "nu": 0.5,
    "lengthscales": [0.7, 1.3],
    "tau2": [0.02, 0.03],
    "L": [[1.0, 0.0], [0.8, 0.6]],
}
HOLES = ((7, 1), (13, 0), (22, 1), (31, 0), (40, 1), (49, 1))


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def art(tmp_path_factory):
    """One CLI pass: simulate, hide entries, fit, sample. Artifacts by path."""
    d = tmp_path_factory.mktemp("cliflow")
    paths = {
        "model": d / "model.json",
        "config": d / "config.toml",
        "data": d / "data.csv",
        "truth": d / "truth.csv",
        "fit": d / "fit.json",
        "post": d / "post.json",
        "dir": d,
    }
    dataset_io.write_json(paths["model"], MODEL)
    paths["config"].write_text("[stage1]\nrestarts = 1\nmax_iter = 200\n")

    full = d / "full.csv"
    assert run("simulate", "--model", paths["model"], "--grid", "60:0:10",
               "--seed", "3", "--out", full) == 0
    data = dataset_io.read_dataset(full)
    mask = data.mask.copy()
    for k, j in HOLES:
        mask[k, j] = False
    hidden = MultiSeriesDataset(
        times=data.times, values=data.values, mask=mask, labels=data.labels
    )
    dataset_io.write_dataset(paths["data"], hidden)
    dataset_io.write_truths(paths["truth"], hidden)

    assert run("fit", "--data", paths["data"], "--nu", "0.5",
               "--config", paths["config"], "--out", paths["fit"]) == 0
    assert run("sample", "--data", paths["data"], "--fit", paths["fit"],
               "-R", "2", "--chain-length", "120", "--burn-in", "20",
               "--seed", "1", "--out", paths["post"]) == 0
    return paths


class TestSimulate:
    def test_grid_output_is_deterministic(self, tmp_path):
        model = tmp_path / "m.json"
        dataset_io.write_json(model, MODEL)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run("simulate", "--model", model, "--grid", "20:0:4", "--seed", "5",
                   "--out", a) == 0
        assert run("simulate", "--model", model, "--grid", "20:0:4", "--seed", "5",
                   "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()
        data = dataset_io.read_dataset(a)
        assert data.n_times == 20 and data.n_series == 2 and data.mask.all()

    def test_explicit_times_and_long_format(self, tmp_path):
        model = tmp_path / "m.json"
        dataset_io.write_json(model, MODEL)
        out = tmp_path / "d.csv"
        assert run("simulate", "--model", model, "--times", "0,0.5,1.25",
                   "--out", out, "--format", "long") == 0
        assert dataset_io.detect_format(out) == "long"
        data = dataset_io.read_dataset(out)
        assert list(data.times) == [0.0, 0.5, 1.25]

    def test_malformed_grid_is_validation_error(self, tmp_path):
        model = tmp_path / "m.json"
        dataset_io.write_json(model, MODEL)
        assert run("simulate", "--model", model, "--grid", "20x0x4",
                   "--out", tmp_path / "d.csv") == 2


class TestFitAndSample:
    def test_fit_artifact(self, art):
        fit = dataset_io.read_json(art["fit"])
        assert fit["nu"] == 0.5
        assert [s["label"] for s in fit["series"]] == ["series_0", "series_1"]
        for s in fit["series"]:
            assert 0.05 < s["ell"] < 20 and s["loglik"] < 0 and s["n_obs"] > 50

    def test_posterior_artifact(self, art):
        post = dataset_io.read_json(art["post"])
        assert post["n_draws"] == 100 and post["burn_in"] == 20 and post["seed"] == 1
        rho = np.array(post["rho_mean"])
        assert rho.shape == (2, 2) and np.allclose(np.diag(rho), 1.0)
        assert 0.0 <= post["acceptance_rate"] <= 1.0

    def test_config_sets_chain_and_flags_override(self, art, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("[stage2]\nchain_length = 40\nburn_in = 10\nseed = 2\n")
        out = tmp_path / "p1.json"
        assert run("sample", "--data", art["data"], "--fit", art["fit"], "-R", "1",
                   "--config", cfg, "--out", out) == 0
        assert dataset_io.read_json(out)["n_draws"] == 30
        out2 = tmp_path / "p2.json"
        assert run("sample", "--data", art["data"], "--fit", art["fit"], "-R", "1",
                   "--config", cfg, "--chain-length", "50", "--out", out2) == 0
        assert dataset_io.read_json(out2)["n_draws"] == 40

    def test_zero_chain_rejected(self, tmp_path):
        assert run("sample", "--data", "x.csv", "--fit", "f.json", "-R", "1",
                   "--chain-length", "0", "--out", tmp_path / "p.json") == 2

    def test_non_fit_artifact_rejected(self, art, tmp_path):
        bogus = tmp_path / "bogus.json"
        dataset_io.write_json(bogus, {"foo": 1})
        assert run("sample", "--data", art["data"], "--fit", bogus, "-R", "1",
                   "--out", tmp_path / "p.json") == 4


class TestPredict:
    def test_model_driven_prediction(self, art, tmp_path):
        out = tmp_path / "pred.csv"
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--out", out) == 0
        table, truths = dataset_io.read_predictions(out)
        assert table.n_rows == len(HOLES)
        assert truths is None
        assert np.all(table.var_predictive > table.var_latent)

    def test_truth_scoring_prints_metrics(self, art, tmp_path, capsys):
        out = tmp_path / "pred.csv"
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--truth", art["truth"], "--out", out) == 0
        line = capsys.readouterr().out
        assert "smse=" in line and "coverage_2sd=" in line and "n_test=6" in line
        table, truths = dataset_io.read_predictions(out)
        assert truths is not None and np.isfinite(truths).all()

    def test_posterior_driven_prediction(self, art, tmp_path):
        out = tmp_path / "pred.csv"
        assert run("predict", "--data", art["data"], "--posterior", art["post"],
                   "--out", out) == 0
        table, _ = dataset_io.read_predictions(out)
        assert table.n_rows == len(HOLES)

    def test_engines_agree_through_the_cli(self, art, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--out", a) == 0
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--engine", "dense", "--out", b) == 0
        ta, _ = dataset_io.read_predictions(a)
        tb, _ = dataset_io.read_predictions(b)
        np.testing.assert_allclose(ta.mean, tb.mean, atol=1e-8)
        np.testing.assert_allclose(ta.var_latent, tb.var_latent, atol=1e-8)

    def test_exactly_one_parameter_source(self, art, tmp_path):
        out = tmp_path / "pred.csv"
        assert run("predict", "--data", art["data"], "--out", out) == 2
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--posterior", art["post"], "--out", out) == 2

    def test_truth_file_mismatches_are_io_errors(self, art, tmp_path):
        bad = tmp_path / "t.csv"
        bad.write_text("time,series,value\n123.0,series_0,1.0\n")
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--truth", bad, "--out", tmp_path / "p.csv") == 4
        bad.write_text("time,series,value\n0.0,nope,1.0\n")
        assert run("predict", "--data", art["data"], "--model", art["model"],
                   "--truth", bad, "--out", tmp_path / "p.csv") == 4


class TestCorr:
    def test_prints_matrix_and_intervals(self, art, capsys):
        assert run("corr", "--posterior", art["post"]) == 0
        out = capsys.readouterr().out
        assert "posterior mean correlation:" in out
        assert "series_0 ~ series_1:" in out and " in [" in out

    def test_rejects_other_json(self, art, capsys):
        assert run("corr", "--posterior", art["fit"]) == 4


class TestExitCodes:
    def test_missing_data_file(self, tmp_path):
        assert run("fit", "--data", tmp_path / "absent.csv", "--nu", "0.5",
                   "--out", tmp_path / "f.json") == 4

    def test_invalid_nu(self, art, tmp_path):
        assert run("fit", "--data", art["data"], "--nu", "0.7",
                   "--out", tmp_path / "f.json") == 2

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_numeric_failure(self, art, tmp_path):
        data = tmp_path / "huge.csv"
        data.write_text("time,a,b\n0.0,1e200,1e200\n1.0,-1e200,1e200\n2.0,1e200,\n")
        assert run("predict", "--data", data, "--model", art["model"],
                   "--out", tmp_path / "p.csv") == 3

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("--version")
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_subcommand_required(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run()
        assert exc.value.code == 2


class TestBenchSynth:
    def test_writes_all_artifacts_and_reruns_identically(self, art, tmp_path):
        args = ("bench-synth", "--seed", "0", "--chain-length", "250",
                "--burn-in", "50", "--config", art["config"])
        d1, d2 = tmp_path / "run1", tmp_path / "run2"
        assert run(*args, "--out-dir", d1) == 0
        names = ["dataset.csv", "truth.csv", "fit.json", "posterior.json",
                 "predictions.csv", "metrics.json", "provenance.json"]
        for name in names:
            assert (d1 / name).exists(), name
        metrics = dataset_io.read_json(d1 / "metrics.json")
        assert np.isfinite(metrics["smse"]) and metrics["n_test"] == 41
        assert 0 <= metrics["coverage_2sd"] <= 1
        prov = dataset_io.read_json(d1 / "provenance.json")
        assert prov["command"] == "bench-synth" and len(prov["config_sha256"]) == 64
        table, truths = dataset_io.read_predictions(d1 / "predictions.csv")
        assert table.n_rows == 41 and truths is not None

        assert run(*args, "--out-dir", d2) == 0
        for name in names:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name
