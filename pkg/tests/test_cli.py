"""
End-to-end tests of the klflow command line through click's CliRunner.
"""

import csv
import json

import pytest
from click.testing import CliRunner

from klflow import __version__
from klflow.artifacts import write_report
from klflow.cli import main
from klflow.types import ConvexMode, RateRegime, RunReport, Termination


@pytest.fixture
def runner():
    return CliRunner()


def read_rows(path):
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_config_is_required(runner):
    result = runner.invoke(main, ["run"])
    assert result.exit_code == 2


class TestRun:
    def test_quadratic(self, runner, example_configs, tmp_path):
        out = tmp_path / "quadratic"
        result = runner.invoke(main, ["run", "--config", str(example_configs / "quadratic.yaml"), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert "Regime: EXPONENTIAL" in result.output
        report = json.loads((out / "report.json").read_text())
        assert report["rate"]["regime"] == "EXPONENTIAL"
        assert report["rate"]["coefficients"][1] == pytest.approx(0.5, rel=1e-3)
        assert report["termination"] == "GRAD_TOL"
        assert all(check["passed"] for check in report["checks"])
        assert (out / "trajectory.csv").exists()
        assert (out / "plot.gp").exists()

    def test_l1_finite(self, runner, example_configs, tmp_path):
        out = tmp_path / "l1"
        result = runner.invoke(main, ["run", "--config", str(example_configs / "l1_finite.yaml"), "--out", str(out)])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert report["mode"] == "prox"
        assert report["rate"]["regime"] == "FINITE"
        assert report["v0_source"] == "subgradient"

    def test_invalid_tolerance_exits_2(self, runner, write_config):
        path = write_config(
            {
                "problem": {"name": "quadratic"},
                "dynamics": {"stop_grad_tol": -1.0},
                "initial": {"x0": [1.0]},
            }
        )
        result = runner.invoke(main, ["run", "--config", str(path)])
        assert result.exit_code == 2
        assert "Error:" in result.output

    def test_missing_config_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, ["run", "--config", str(tmp_path / "absent.yaml")])
        assert result.exit_code == 2

    def test_uncertified_v0_exits_2(self, runner, write_config):
        path = write_config(
            {
                "problem": {"name": "l1_plus_quadratic"},
                "dynamics": {"h": 0.1, "t_max": 1.0},
                "initial": {"x0": [1.0], "v0": [0.5]},
            }
        )
        result = runner.invoke(main, ["run", "--config", str(path)])
        assert result.exit_code == 2

    def test_unstable_step_exits_3(self, runner, example_configs, tmp_path):
        out = tmp_path / "unstable"
        result = runner.invoke(
            main, ["run", "--config", str(example_configs / "double_well_unstable.yaml"), "--out", str(out)]
        )
        assert result.exit_code == 3
        report = json.loads((out / "report.json").read_text())
        assert report["termination"] == "DIVERGED"
        assert report["limit"] is None

    def test_failed_check_exits_1(self, runner, write_config):
        path = write_config(
            {
                "problem": {"name": "quadratic"},
                "dynamics": {"h": 0.01, "t_max": 1.0},
                "initial": {"x0": [1.0]},
                "checks": [{"name": "energy_identity", "tol": 0.0}, {"name": "monotonicity"}],
            }
        )
        result = runner.invoke(main, ["run", "--config", str(path)])
        assert result.exit_code == 1
        assert "FAILED energy_identity" in result.output
        assert "Error: 1 check(s) failed: energy_identity" in result.output


class TestCheck:
    def test_quadratic_passes(self, runner, example_configs):
        result = runner.invoke(main, ["check", "--config", str(example_configs / "check_quadratic.yaml")])
        assert result.exit_code == 0, result.output
        assert "kl_inequality" in result.output
        assert "kl_sharpness" in result.output

    def test_misset_theta_fails(self, runner, example_configs):
        result = runner.invoke(main, ["check", "--config", str(example_configs / "check_quadratic_misset.yaml")])
        assert result.exit_code == 1
        assert "FAIL" in result.output
        assert "check(s) failed: " in result.output

    def test_without_profile_checks_oracles_only(self, runner, example_configs):
        result = runner.invoke(main, ["check", "--config", str(example_configs / "check_rosenbrock.yaml")])
        assert result.exit_code == 0, result.output
        assert "no KL profile for rosenbrock_plus_l2" in result.output
        assert "kl_inequality" not in result.output


class TestSweep:
    def test_lambda_sweep(self, runner, example_configs, tmp_path):
        out = tmp_path / "sweep"
        result = runner.invoke(
            main, ["sweep", "--config", str(example_configs / "sweep_lambda.yaml"), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        rows = read_rows(out / "aggregate.csv")
        assert [row["cell"] for row in rows] == ["0", "1", "2"]
        for row in rows:
            lam = float(row["lambda"])
            assert row["regime"] == "EXPONENTIAL"
            assert float(row["coef_b"]) == pytest.approx(1.0 / (lam + 1.0), rel=0.02)
        assert (out / "cell_000" / "report.json").exists()
        assert (out / "cell_002" / "trajectory.csv").exists()

    def test_empty_axis_exits_2(self, runner, write_config):
        path = write_config(
            {
                "problem": {"name": "quadratic"},
                "initial": {"x0": [1.0]},
                "sweep": {"lambda": []},
            }
        )
        result = runner.invoke(main, ["sweep", "--config", str(path)])
        assert result.exit_code == 2

    def test_without_sweep_section_exits_2(self, runner, example_configs, tmp_path):
        result = runner.invoke(
            main, ["sweep", "--config", str(example_configs / "quadratic.yaml"), "--out", str(tmp_path)]
        )
        assert result.exit_code == 2

    def test_multistart_aggregate_is_reproducible(self, runner, write_config, tmp_path):
        path = write_config(
            {
                "problem": {"name": "double_well", "dimension": 2},
                "dynamics": {"h": 0.01, "t_max": 10.0},
                "initial": {"random": {"radius": 2.0, "seed": 7}},
                "sweep": {"starts": 4, "workers": 2},
                "outputs": {"directory": str(tmp_path / "unused"), "formats": ["json"]},
            }
        )
        first, second, serial = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        for out, workers in ((first, "2"), (second, "2"), (serial, "1")):
            result = runner.invoke(main, ["sweep", "--config", str(path), "--out", str(out), "--workers", workers])
            assert result.exit_code in (0, 1), result.output
        text = (first / "aggregate.csv").read_bytes()
        assert text == (second / "aggregate.csv").read_bytes()
        assert text == (serial / "aggregate.csv").read_bytes()
        assert len(read_rows(first / "aggregate.csv")) == 4


class TestRates:
    def test_table_from_reports(self, runner, example_configs, tmp_path):
        run_out = tmp_path / "quadratic"
        runner.invoke(main, ["run", "--config", str(example_configs / "quadratic.yaml"), "--out", str(run_out)])
        undetermined = RunReport(
            config={},
            problem="power2p",
            mode=ConvexMode.SMOOTH,
            termination=Termination.T_MAX,
            steps=10,
            sample_count=11,
            v0_source="gradient",
            known_theta=0.75,
            predicted_regime=RateRegime.POLYNOMIAL,
            predicted_exponent=0.5,
        )
        short = write_report(undetermined, tmp_path / "short.json")

        table_out = tmp_path / "rates"
        result = runner.invoke(main, ["rates", str(run_out / "report.json"), str(short), "--out", str(table_out)])
        assert result.exit_code == 0, result.output
        rows = read_rows(table_out / "rates.csv")
        assert rows[0]["problem"] == "quadratic"
        assert rows[0]["observed_regime"] == "EXPONENTIAL"
        assert rows[0]["flag"] == ""
        assert rows[1]["observed_regime"] == "UNDETERMINED"
        assert rows[1]["flag"] == "undetermined"
        assert (table_out / "rates.txt").read_text() in result.output

    def test_no_reports_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, ["rates", "--out", str(tmp_path)])
        assert result.exit_code == 2
