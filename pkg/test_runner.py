"""
Tests for config parsing, the run/sweep pipeline, file output and the CLI.
Run: pytest test_runner.py
"""
import json
import math
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

import app.cli
import app.runner
from app.cli import xft
from app.config import BIN_TOL, CHECK_TOLERANCES
from app.errors import ConfigValidationError, IncompatibleSpectraError, NonUnitaryError, ParseError, StageError
from app.export import format_float, frame_to_csv
from app.models import resolve_spectrum
from app.runner import execute, parse_config, run, run_means, sweep, validate_config, with_axis

PRESETS = Path(__file__).parent / "presets"

MINIMAL = """\
system:
  a: qubit
  b: qubit
thermal:
  beta_a: 2.0
  beta_b: 1.0
"""


def write_config(tmp_path: Path, text: str, name: str = "config.yaml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# --- Config parsing --- #

def test_minimal_config_gets_defaults(tmp_path):
    config = parse_config(write_config(tmp_path, MINIMAL))
    assert config.system.a == [0.0, 1.0]
    assert config.state.family == "product"
    assert config.dynamics.mode == "strict" and config.dynamics.theta is None
    assert config.bin_tol == BIN_TOL
    assert config.output.formats == ["json", "csv"]
    assert [c.name for c in config.checks] == list(CHECK_TOLERANCES)
    assert config.tolerance("per_history_ratio") == 1e-9


def test_unknown_key_names_key_and_line(tmp_path):
    path = write_config(tmp_path, MINIMAL + "  gamma_factor: 2\n")
    with pytest.raises(ParseError) as excinfo:
        parse_config(path)
    assert excinfo.value.key == "thermal.gamma_factor"
    assert excinfo.value.line == 7
    assert "gamma_factor" in str(excinfo.value)


def test_negative_beta_names_field(tmp_path):
    path = write_config(tmp_path, MINIMAL.replace("beta_a: 2.0", "beta_a: -1"))
    with pytest.raises(ConfigValidationError) as excinfo:
        parse_config(path)
    assert excinfo.value.field == "thermal.beta_a"


def test_malformed_yaml(tmp_path):
    with pytest.raises(ParseError) as excinfo:
        parse_config(write_config(tmp_path, "system:\n  a: [0, 1\n  b: qubit\n"))
    assert excinfo.value.line is not None


INVALID_CONFIGS = [
    ("unknown preset", {"system": {"a": "ququart", "b": "qubit"}}, "system.a"),
    ("unknown check", {"checks": ["entropy_production"]}, "checks.0"),
    ("lambda out of range", {"state": {"family": "classical_coupled", "lambda": 1.5}}, "state.lambda"),
    ("exchange in mean mode", {"dynamics": {"mode": "mean_conserving", "coupling": "exchange"}}, "dynamics"),
]


@pytest.mark.parametrize("label, override, field", INVALID_CONFIGS)
def test_invalid_values(label, override, field):
    data = {"system": {"a": "qubit", "b": "qubit"}, "thermal": {"beta_a": 1.0, "beta_b": 1.0}}
    data.update(override)
    with pytest.raises(ConfigValidationError) as excinfo:
        validate_config(data)
    assert excinfo.value.field.startswith(field), label


def test_check_tolerance_override(tmp_path):
    config = parse_config(PRESETS / "lambda-sweep.yaml")
    assert [c.name for c in config.checks][:2] == ["per_history_ratio", "class_bounds"]
    assert config.tolerance("mutual_information_identities") == 1e-9


SPECTRUM_CASES = [
    ("qubit", [0.0, 1.0]),
    ("qutrit", [0.0, 1.0, 2.0]),
    ("ladder(4, 0.5)", [0.0, 0.5, 1.0, 1.5]),
    ([0, 2, 3], [0.0, 2.0, 3.0]),
]


@pytest.mark.parametrize("value, expected", SPECTRUM_CASES)
def test_resolve_spectrum(value, expected):
    assert resolve_spectrum(value) == expected


# --- Runs --- #

def test_baseline_preset(tmp_path):
    report = run(parse_config(PRESETS / "jw-baseline.yaml"), out=tmp_path)
    assert report.passed
    baseline = next(t for t in report.theorems if t.name == "baseline_xft")
    assert baseline.details["ratio[q=+1]"] == pytest.approx(math.e, rel=1e-9)
    assert {p.name for p in tmp_path.iterdir()} == {"report.json", "histories.csv", "classes.csv"}

    echoed = json.loads((tmp_path / "report.json").read_text())
    assert echoed["config"]["seed"] == 0
    assert echoed["config"]["bin_tol"] == BIN_TOL
    assert echoed["theorems"][0]["pass"] is True


def test_thermofield_preset_skips_baseline(tmp_path):
    report = run(parse_config(PRESETS / "tfd-pure.yaml"), out=tmp_path)
    by_name = {t.name: t for t in report.theorems}
    assert by_name["baseline_xft"].skipped
    assert "NotProductStateError" in by_name["baseline_xft"].note
    for name in ("per_history_ratio", "class_bounds", "integral_equality"):
        assert not by_name[name].fails_run, name
    assert report.passed


def test_runs_are_deterministic(tmp_path):
    config = parse_config(PRESETS / "lambda-sweep.yaml")
    first = run(config, out=tmp_path / "one")
    second = run(config, out=tmp_path / "two")
    assert (tmp_path / "one" / "histories.csv").read_bytes() == (tmp_path / "two" / "histories.csv").read_bytes()
    assert (tmp_path / "one" / "classes.csv").read_bytes() == (tmp_path / "two" / "classes.csv").read_bytes()
    assert first.model_dump(exclude={"wall_time"}) == second.model_dump(exclude={"wall_time"})


def test_verify_writes_report_only(tmp_path):
    run(parse_config(PRESETS / "coherent-gap.yaml"), out=tmp_path, formats=["json"], tables=False)
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_failed_output_leaves_nothing_behind(tmp_path, monkeypatch):
    def broken(classes):
        raise OSError("disk full")

    monkeypatch.setattr(app.runner, "class_table", broken)
    with pytest.raises(StageError) as excinfo:
        run(parse_config(PRESETS / "jw-baseline.yaml"), out=tmp_path)
    assert excinfo.value.stage == "output"
    assert not any(tmp_path.iterdir())


def test_stage_is_named_on_failure(tmp_path):
    config = validate_config({
        "system": {"a": "qubit", "b": "qutrit"},
        "thermal": {"beta_a": 1.0, "beta_b": 1.0},
        "state": {"family": "thermofield_pure"},
    })
    with pytest.raises(StageError) as excinfo:
        run(config, out=tmp_path)
    assert excinfo.value.stage == "state"
    assert isinstance(excinfo.value.cause, IncompatibleSpectraError)


def test_invalid_time_reversal_fails_dynamics_stage(tmp_path):
    config = validate_config({
        "system": {"a": "qubit", "b": "qubit"},
        "thermal": {"beta_a": 1.0, "beta_b": 1.0},
        "dynamics": {"theta": [1, 0, 2, 3]},
    })
    with pytest.raises(StageError) as excinfo:
        run(config, out=tmp_path)
    assert excinfo.value.stage == "dynamics"


# --- Sweeps --- #

def test_lambda_sweep(tmp_path):
    result = sweep(parse_config(PRESETS / "lambda-sweep.yaml"), "lambda", [0.0, 0.5, 1.0], out=tmp_path)
    assert result.passed
    assert list(result.summary.columns) == ["lambda", "mean_q", "mean_delta_eps", "mean_delta_I",
                                            "integral_lhs", "bound_width", "passed"]
    assert result.summary["bound_width"].iloc[0] <= 1e-10
    assert result.summary["bound_width"].iloc[1] > 1e-3
    assert result.max_work == []
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "lambda_002" / "histories.csv").exists()
    assert not (tmp_path / "max_work.json").exists()
    # base seed + index
    assert [r.config["seed"] for r in result.reports] == [11, 12, 13]


def test_strength_sweep_emits_max_work(tmp_path):
    result = sweep(parse_config(PRESETS / "jw-baseline.yaml"), "strength", [0.1, 0.2], out=tmp_path, workers=2)
    assert len(result.max_work) == 1
    assert result.max_work[0].step == pytest.approx(0.1)
    assert result.max_work[0].dI_mean == pytest.approx(0.0, abs=1e-12)
    payload = json.loads((tmp_path / "max_work.json").read_text())
    assert payload[0]["axis"] == "strength"


def test_run_means_rejects_non_unitary_evolution():
    ctx = execute(parse_config(PRESETS / "jw-baseline.yaml"))
    with pytest.raises(NonUnitaryError):
        run_means(replace(ctx, u=1.01 * np.eye(4)), "strength", 1.0)


SWEEP_ERRORS = [
    ("jw-baseline.yaml", "lambda", [0.0, 0.5]),
    ("lambda-sweep.yaml", "gamma", [1.0]),
    ("lambda-sweep.yaml", "lambda", []),
]


@pytest.mark.parametrize("preset, axis, values", SWEEP_ERRORS)
def test_sweep_rejects_bad_requests(tmp_path, preset, axis, values):
    with pytest.raises(ConfigValidationError):
        sweep(parse_config(PRESETS / preset), axis, values, out=tmp_path)


def test_with_axis_replaces_value_and_seed():
    config = with_axis(parse_config(PRESETS / "lambda-sweep.yaml"), "beta_B", 0.25, 99)
    assert config.thermal.beta_b == 0.25
    assert config.seed == 99


# --- Export --- #

FLOAT_CASES = [
    (math.inf, "+inf"),
    (-math.inf, "-inf"),
    (math.nan, "nan"),
    (0.1, "0.10000000000000001"),
    (2.0, "2"),
]


@pytest.mark.parametrize("value, expected", FLOAT_CASES)
def test_format_float(value, expected):
    assert format_float(value) == expected


def test_frame_to_csv_keeps_integers():
    text = frame_to_csv(pd.DataFrame({"id": [1, 2], "x": [0.5, -math.inf]}))
    assert text == "id,x\n1,0.5\n2,-inf\n"


# --- CLI --- #

def test_cli_run_passes(tmp_path):
    result = CliRunner().invoke(xft, ["run", str(PRESETS / "jw-baseline.yaml"), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output
    assert (tmp_path / "histories.csv").exists()


def test_cli_verify_with_seed_and_format(tmp_path):
    result = CliRunner().invoke(xft, ["verify", str(PRESETS / "tfd-pure.yaml"), "--out", str(tmp_path), "--seed", "3"])
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "report.json").read_text())["config"]["seed"] == 3
    assert not (tmp_path / "histories.csv").exists()


def test_cli_failed_check_exits_one(tmp_path, monkeypatch):
    monkeypatch.setattr(app.cli, "run", lambda *args, **kwargs: SimpleNamespace(theorems=[], passed=False))
    result = CliRunner().invoke(xft, ["run", str(PRESETS / "jw-baseline.yaml"), "--out", str(tmp_path)])
    assert result.exit_code == 1


def test_cli_config_error_exits_two(tmp_path):
    path = write_config(tmp_path, MINIMAL + "gamma_factor: 1\n")
    result = CliRunner().invoke(xft, ["run", str(path), "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "gamma_factor" in result.output


def test_cli_rejects_unknown_format(tmp_path):
    result = CliRunner().invoke(xft, ["run", str(PRESETS / "jw-baseline.yaml"), "--format", "xml"])
    assert result.exit_code == 2


def test_cli_sweep(tmp_path):
    result = CliRunner().invoke(xft, ["sweep", str(PRESETS / "jw-baseline.yaml"), "--axis", "t",
                                      "--values", "1.0,1.5707963267948966", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "max_work.json").exists()
