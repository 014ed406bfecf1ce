import json

import numpy as np
import pandas as pd
import pytest

from cbsr.cli.app import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, run
from cbsr.enums.fitter_kind import FitterKind
from cbsr.estimation.pipeline import MethodConfig, design_for, fit_weights, plugin_norm_cl
from cbsr.models.dataset import load_csv, write_csv


@pytest.fixture
def data_file(tmp_path, make_instance):
    path = tmp_path / "data.csv"
    write_csv(make_instance(n=150, seed=4), path)
    return path


def _error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def _fit_args(data_file, *extra: str) -> list[str]:
    return ["fit", "--input", str(data_file), "--outcome-col", "y", *extra]


class TestFit:
    def test_fit_report(self, data_file, capsys):
        assert run(_fit_args(data_file, "--estimand", "ate")) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["converged"]
        assert report["estimand"] == "ATE"
        assert report["max_abs_balance_residual"] <= 1e-8
        assert report["columns"] == ["(intercept)", "x1", "x2", "x3"]
        assert report["config"]["seed"] == 0

    def test_ridge_report_has_bias_bound(self, data_file, capsys):
        assert run(_fit_args(data_file, "--fitter", "l2", "--lambda", "0.1")) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["lambda"] == 0.1
        assert report["max_bias"] > 0

    def test_replay_from_echoed_config(self, data_file, tmp_path):
        first, second = tmp_path / "first.json", tmp_path / "second.json"
        args = _fit_args(data_file, "--fitter", "l1", "--lambda", "0.05", "--out", str(first))
        assert run(args) == EXIT_OK
        assert run(["fit", "--config", str(first), "--out", str(second)]) == EXIT_OK
        a = json.loads(first.read_text(encoding="utf-8"))
        b = json.loads(second.read_text(encoding="utf-8"))
        assert a["coefficients"] == b["coefficients"]
        assert b["config"]["fitter"] == "l1"


class TestExitCodes:
    def test_missing_input_file(self, tmp_path, capsys):
        code = run(["fit", "--input", str(tmp_path / "absent.csv")])
        assert code == EXIT_IO
        assert _error(capsys)["exit_code"] == EXIT_IO

    def test_rkhs_without_kernel(self, data_file, capsys):
        assert run(_fit_args(data_file, "--fitter", "rkhs", "--lambda", "1")) == EXIT_CONFIG
        assert _error(capsys)["error"] == "ConfigError"

    def test_invalid_treatment_value(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("t,x1\n0,1\n2,3\n1,4\n", encoding="utf-8")
        assert run(["fit", "--input", str(path)]) == EXIT_IO
        error = _error(capsys)
        assert error["error"] == "DataError" and error["row"] == 2

    def test_separated_data(self, tmp_path, capsys):
        path = tmp_path / "separated.csv"
        x = [-2, -1.5, -1, 1, 1.5, 2]
        rows = "\n".join(f"{int(v > 0)},{v}" for v in x)
        path.write_text("t,x1\n" + rows + "\n", encoding="utf-8")
        assert run(["fit", "--input", str(path), "--estimand", "owate"]) == EXIT_NUMERIC
        assert _error(capsys)["error"] == "Separated"


class TestEstimate:
    def test_honest_interval_with_constant_limit(self, data_file, capsys):
        args = _fit_args(data_file, "--fitter", "l2", "--lambda", "0.05", "--norm-cl", "2")
        args[0] = "estimate"
        assert run(args) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        honest, naive = report["honest"], report["naive"]
        assert honest["norm_cl_mode"] == "constant"
        assert honest["half_width_bias"] == pytest.approx(2 * report["max_bias_factor"])
        assert honest["half_width_noise"] == pytest.approx(naive["half_width_noise"])

    def test_plugin_norm_limit(self, data_file, capsys):
        args = _fit_args(
            data_file, "--fitter", "l2", "--lambda", "0.05", "--norm-cl-mode", "plugin"
        )
        args[0] = "estimate"
        assert run(args) == EXIT_OK
        report = json.loads(capsys.readouterr().out)

        ds = load_csv(data_file, "t", "y")
        method = MethodConfig(fitter=FitterKind.L2, estimand="att", lambda_=0.05)
        dm = design_for(ds, method)
        fitted = fit_weights(ds, method, design=dm)
        expected = plugin_norm_cl(ds, method, fitted, dm)

        honest = report["honest"]
        assert honest["norm_cl_mode"] == "plugin"
        assert honest["half_width_bias"] == pytest.approx(report["max_bias_factor"] * expected)

    def test_plugin_mode_rejects_constant_limit(self, data_file, capsys):
        args = _fit_args(
            data_file, "--fitter", "l2", "--lambda", "0.05", "--norm-cl", "2",
            "--norm-cl-mode", "plugin",
        )
        args[0] = "estimate"
        assert run(args) == EXIT_CONFIG

    def test_glm_certifies_no_bias_bound(self, data_file, capsys):
        args = _fit_args(data_file, "--norm-cl", "2")
        args[0] = "estimate"
        assert run(args) == EXIT_CONFIG

    def test_split_sample_augmented(self, data_file, capsys):
        args = _fit_args(
            data_file, "--aipw", "--outcome-model", "linear", "--split", "0.5", "--seed", "3"
        )
        args[0] = "estimate"
        assert run(args) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["n_estimation"] == 75
        assert report["estimate"]["method"] == "aipw_att"
        assert report["honest"] is None


class TestOtherCommands:
    def test_weights_csv(self, data_file, tmp_path):
        out = tmp_path / "weights.csv"
        args = ["weights", "--input", str(data_file), "--outcome-col", "y", "--out", str(out)]
        assert run(args) == EXIT_OK
        frame = pd.read_csv(out)
        assert list(frame.columns) == ["row", "t", "p", "w", "normalized"]
        assert len(frame) == 150
        treated = frame["t"] == 1
        np.testing.assert_allclose(frame.loc[treated, "w"], 1.0)
        np.testing.assert_allclose(frame.loc[~treated, "normalized"].sum(), 1.0)

    def test_diagnose_against_dual(self, data_file, capsys):
        assert run(["diagnose", "--input", str(data_file), "--outcome-col", "y"]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["max_dual_weight_discrepancy"] <= 1e-6
        assert abs(report["weighted"]["dual_gap"]) <= 1e-6
        assert report["weighted"]["max_abs_std_diff"] < report["unweighted"]["max_abs_std_diff"]

    def test_simulate_writes_metrics(self, tmp_path):
        out = tmp_path / "metrics.csv"
        args = ["simulate", "--design", "kang_schafer", "--n", "100", "--replicates", "2"]
        assert run([*args, "--seed", "2", "--out", str(out)]) == EXIT_OK
        assert list(pd.read_csv(out)["method"]) == ["glm/att"]
        payload = json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))
        assert payload[0]["replicates"] == 2
