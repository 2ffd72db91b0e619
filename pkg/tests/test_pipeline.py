import glob
import logging
import os

import numpy as np
import pytest
from sqlalchemy.exc import SQLAlchemyError

from experiments.cli import main
from experiments.pipeline import Pipeline, RunConfig
from models import ExperimentRun, RunResidual
from skorokhod.fixtures import FIXTURES
from skorokhod.geometry import SPData
from skorokhod.paths import PwLinearPath
from src.data_generator import generate_path, generate_psi, generate_rbm_inputs
from utils.db import db_session
from utils.io import read_frame, read_json, write_frame, write_json


@pytest.fixture
def input_files(tmp_path):
    """Fixture to write SP data, B polytopes, paths and RBM inputs to a temporary directory."""
    files = {}
    for name in ("ghr_quadrant", "d2_counterexample"):
        fixture = FIXTURES[name]()
        files[f"sp-{name}"] = write_json(fixture.sp.to_json(), str(tmp_path / f"sp-{name}.json"))
        files[f"b-{name}"] = write_json(fixture.B.to_json(), str(tmp_path / f"b-{name}.json"))

    files["path"] = write_frame(generate_path(0).to_frame(), str(tmp_path / "path.csv"))
    files["psi"] = write_frame(generate_psi(0).to_frame(), str(tmp_path / "psi.csv"))

    params, mixed, _ = generate_rbm_inputs()
    files["params"] = write_json(params, str(tmp_path / "params.json"))
    files["pert"] = write_json(mixed, str(tmp_path / "pert.json"))
    return files


def ledger_runs(output_dir):
    with db_session(output_dir) as session:
        return [
            (run.subcommand, run.status, run.exit_code, len(run.residuals))
            for run in session.query(ExperimentRun).order_by(ExperimentRun.id).all()
        ]


class TestPipeline:
    """
    Test cases for the experiment pipeline.
    """

    def test_counterexample(self, output_dir):
        """
        Both subsequences report the limit (1, 0) and the corner face set lies in W.
        """
        pipeline = Pipeline(RunConfig("counterexample", kmax=10, out=output_dir))
        assert pipeline.run() == 0

        report = read_json(os.path.join(output_dir, "counterexample-report.json"))
        assert report["limit_even"] == [1.0, 0.0]
        assert report["limit_odd"] == [1.0, 0.0]
        assert report["W"] == [[0, 1]]
        assert report["tau"] == 1.0
        assert report["corner_projection"] == "undefined (W)"
        assert len(read_frame(os.path.join(output_dir, "counterexample.csv"))) == 10
        assert ledger_runs(output_dir) == [("counterexample", "passed", 0, 0)]

    def test_esm_then_dp(self, input_files, output_dir):
        """
        The stored ESM solution feeds the derivative problem.
        """
        sp = input_files["sp-ghr_quadrant"]
        assert Pipeline(RunConfig("esm", sp=sp, path=input_files["path"], out=output_dir, samples=5)).run() == 0
        esm_csv = os.path.join(output_dir, "esm.csv")
        assert list(read_frame(esm_csv).columns)[:3] == ["t", "x_1", "x_2"]

        config = RunConfig("dp", sp=sp, esm=esm_csv, psi=input_files["psi"], out=output_dir, samples=5)
        pipeline = Pipeline(config)
        assert pipeline.run() == 0
        assert not pipeline.residual_errors["dp"]
        assert os.path.exists(os.path.join(output_dir, "dp.csv"))
        events = read_json(os.path.join(output_dir, "dp-events.json"))
        assert events["tau"] is None

        runs = ledger_runs(output_dir)
        assert [run[:3] for run in runs] == [("esm", "passed", 0), ("dp", "passed", 0)]
        assert all(run[3] > 0 for run in runs)

    def test_check_with_b(self, input_files, output_dir):
        config = RunConfig(
            "check",
            sp=input_files["sp-ghr_quadrant"],
            b=input_files["b-ghr_quadrant"],
            delta=0.2,
            out=output_dir,
        )
        assert Pipeline(config).run() == 0
        report = read_json(os.path.join(output_dir, "check-report.json"))
        assert report["set_b"]["passed"]
        assert report["rho"] == pytest.approx(np.sqrt(0.5))
        assert 0.0 < report["constants"]["delta_hat"]["0;1"] < 1.0

    def test_check_reports_w(self, input_files, output_dir):
        Pipeline(RunConfig("check", sp=input_files["sp-d2_counterexample"], out=output_dir)).run()
        report = read_json(os.path.join(output_dir, "check-report.json"))
        assert report["classification"]["W"] == [[0, 1]]

    def test_proj(self, input_files, output_dir):
        config = RunConfig(
            "proj",
            sp=input_files["sp-ghr_quadrant"],
            faces="0",
            y=[1.0, 2.0],
            sequence="0|1",
            target="0,1",
            out=output_dir,
        )
        assert Pipeline(config).run() == 0
        report = read_json(os.path.join(output_dir, "proj-report.json"))
        np.testing.assert_allclose(report["Ly"], [0.0, 3.0], atol=1e-12)
        assert report["composition"]["contraction_factor"] < 1.0

    def test_deriv_fd_artifacts(self, input_files, output_dir):
        config = RunConfig(
            "deriv-fd",
            sp=input_files["sp-ghr_quadrant"],
            path=input_files["path"],
            psi=input_files["psi"],
            out=output_dir,
        )
        Pipeline(config).run()
        frame = read_frame(os.path.join(output_dir, "deriv-fd.csv"))
        assert {"dz_1", "fd_0.01_1", "fd_0.0001_2"} <= set(frame.columns)
        report = read_json(os.path.join(output_dir, "deriv-fd-report.json"))
        assert set(report["errors"]) == {"0.01", "0.001", "0.0001"}

    def test_rbm_artifacts(self, input_files, output_dir):
        config = RunConfig(
            "rbm",
            params=input_files["params"],
            pert=input_files["pert"],
            grid_dt=2.0**-6,
            seeds=2,
            out=output_dir,
        )
        Pipeline(config).run()
        errors = read_frame(os.path.join(output_dir, "rbm-errors.csv"))
        assert list(errors["seed"]) == [0, 1]
        for seed in (0, 1):
            assert os.path.exists(os.path.join(output_dir, f"rbm-seed-{seed}.csv"))
        report = read_json(os.path.join(output_dir, "rbm-report.json"))
        assert [path["seed"] for path in report["paths"]] == [0, 1]

    def test_refine_half_line(self, tmp_path, output_dir):
        """
        X(t) = 1 - 3t on the half-line converges at first order in dt.
        """
        sp = write_json(
            SPData([[1.0]], [0.0], [[1.0]], family="one_dim").to_json(), str(tmp_path / "sp-half-line.json")
        )
        path = write_frame(PwLinearPath([0.0, 1.0], [1.0, -2.0]).to_frame(), str(tmp_path / "line.csv"))
        pipeline = Pipeline(RunConfig("refine", sp=sp, path=path, levels=[6, 7, 8], out=output_dir))
        assert pipeline.run() == 0

        table = read_frame(os.path.join(output_dir, "refine.csv"))
        assert list(table["dt"]) == [2.0**-6, 2.0**-7, 2.0**-8]
        np.testing.assert_allclose(table["error"], 2.0 * table["dt"] / 3.0, rtol=1e-9)
        report = read_json(os.path.join(output_dir, "refine-report.json"))
        assert report["slope"] == pytest.approx(1.0, abs=1e-6)
        assert report["residuals"]["refinement_slope_shortfall"]["passed"]

    def test_refine_brownian_artifacts(self, input_files, output_dir):
        config = RunConfig(
            "refine", params=input_files["params"], levels=[6, 7, 8], grid_dt=2.0**-10, seeds=3, out=output_dir
        )
        Pipeline(config).run()
        table = read_frame(os.path.join(output_dir, "refine.csv"))
        assert list(table.columns) == ["dt", "error", "successive"]
        assert list(table["dt"]) == [2.0**-6, 2.0**-7, 2.0**-8]
        report = read_json(os.path.join(output_dir, "refine-report.json"))
        assert report["min_slope"] == 0.25

    def test_refine_needs_an_input(self, output_dir):
        pipeline = Pipeline(RunConfig("refine", levels=[0, 6], out=output_dir))
        assert pipeline.run() == 1
        message = pipeline.residual_errors["refine"][0]["message"]
        assert "refine needs --params" in message and "levels:" in message

    def test_jitter_trend_artifacts(self, input_files, output_dir):
        config = RunConfig("jitter", params=input_files["params"], levels=[6, 8, 10], seeds=10, out=output_dir)
        Pipeline(config).run()
        table = read_frame(os.path.join(output_dir, "jitter-trend.csv"))
        assert list(table["dt"]) == [2.0**-6, 2.0**-8, 2.0**-10]
        assert (table["seeds"] == 10).all()
        report = read_json(os.path.join(output_dir, "jitter-report.json"))
        assert len(report["trend"]) == 3
        assert "corner_time_not_decreasing" in report["residuals"]

    def test_ledger_failure_keeps_exit_code(self, monkeypatch, caplog, output_dir):
        """
        A database error while recording the run is logged and leaves the exit code alone.
        """

        def locked(output_dir):
            raise SQLAlchemyError("database is locked")

        monkeypatch.setattr("experiments.pipeline.db_session", locked)
        with caplog.at_level(logging.WARNING, logger="experiments.pipeline"):
            assert Pipeline(RunConfig("counterexample", kmax=5, out=output_dir)).run() == 0
        assert "Run ledger not updated: database is locked" in caplog.text

    def test_invalid_config(self, output_dir):
        """
        Invalid options are collected, logged to an errors file and recorded as an error run.
        """
        pipeline = Pipeline(RunConfig("counterexample", eps=[1e-4, 1e-2], kmax=30, out=output_dir))
        assert pipeline.run() == 1
        assert pipeline.residual_errors["counterexample"][0]["error"] == "InvalidDataError"
        message = pipeline.residual_errors["counterexample"][0]["message"]
        assert "eps:" in message and "kmax: 30" in message
        assert len(glob.glob(os.path.join(output_dir, "*-pipeline-errors.json"))) == 1
        assert ledger_runs(output_dir) == [("counterexample", "error", 1, 0)]

    def test_missing_input_file(self, output_dir):
        pipeline = Pipeline(RunConfig("check", sp=os.path.join(output_dir, "nope.json"), out=output_dir))
        assert pipeline.run() == 1
        assert "does not exist" in pipeline.residual_errors["check"][0]["message"]


class TestResidualLedger:
    """
    Test cases for the run ledger models.
    """

    def test_run_validation(self):
        run = ExperimentRun(subcommand="plot", config_json="{", status="ok", exit_code=0, colour="red")
        assert not run.validate()
        assert run.validation_errors == [
            "Unknown columns: colour",
            "subcommand: plot is invalid.",
            "config_json: { is invalid.",
            "status: ok is invalid.",
        ]

    def test_residual_value(self):
        residual = RunResidual(run_id=1, name="z_in_g", value="1e-12", tolerance=1e-9, passed=True)
        assert residual.validate()
        assert residual.value == 1e-12


class TestCli:
    """
    Test cases for the command-line entry point.
    """

    def test_counterexample_exit_code(self, output_dir):
        assert main(["counterexample", "--kmax", "5", "--out", output_dir]) == 0

    def test_bad_vector(self, output_dir):
        assert main(["proj", "--faces", "0", "--y", "a,b", "--out", output_dir]) == 2

    def test_tolerance_flags(self, input_files, output_dir):
        """
        A negative tolerance override is rejected by the configuration check.
        """
        argv = ["check", "--sp", input_files["sp-ghr_quadrant"], "--tol-face", "-1", "--out", output_dir]
        assert main(argv) == 1

    def test_levels_flag(self, tmp_path, output_dir):
        sp = write_json(SPData([[1.0]], [0.0], [[1.0]], family="one_dim").to_json(), str(tmp_path / "sp.json"))
        path = write_frame(PwLinearPath([0.0, 1.0], [1.0, -2.0]).to_frame(), str(tmp_path / "line.csv"))
        assert main(["refine", "--sp", sp, "--path", path, "--levels", "5,6", "--out", output_dir]) == 0
        assert main(["refine", "--sp", sp, "--path", path, "--levels", "5,x", "--out", output_dir]) == 2
