import json

import pytest
from click.testing import CliRunner

from cli import EXIT_CONFIG, EXIT_NOT_CERTIFIED, EXIT_NUMERICAL, cli
from tests.conftest import CONFIG_DIR
from utils.io import read_csv


@pytest.fixture
def runner():
    return CliRunner()


def _write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def small_custom_config(tmp_path, quadratic5d_config_dict):
    payload = dict(quadratic5d_config_dict)
    payload["K"] = 20
    payload["diagnostics"] = {"tube": True, "stride": 5}
    return _write_config(tmp_path, payload)


@pytest.fixture
def small_toll_config(tmp_path):
    payload = json.loads((CONFIG_DIR / "toll.json").read_text())
    payload["toll"] = {"n": 10, "tau": 0.2, "reference_pool": False}
    payload["K"] = 5
    return _write_config(tmp_path, payload, "toll.json")


def test_missing_config_is_a_config_error(runner, tmp_path):
    result = runner.invoke(cli, ["certify", "--config", str(tmp_path / "absent.json")])
    assert result.exit_code == EXIT_CONFIG
    assert "config file not found" in result.stderr


def test_invalid_config_is_a_config_error(runner, tmp_path):
    path = _write_config(tmp_path, {"experiment": "custom"})
    result = runner.invoke(cli, ["run", "--config", path, "--out", str(tmp_path / "out")])
    assert result.exit_code == EXIT_CONFIG


def test_exterior_witness_is_a_numerical_error(runner, tmp_path, quadratic5d_config_dict):
    payload = dict(quadratic5d_config_dict)
    payload["custom"] = dict(payload["custom"])
    payload["custom"]["polytope"] = {
        "A": [[1.0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0], [0, 0, 1.0, 0, 0], [0, 0, 0, 1.0, 0], [0, 0, 0, 0, 1.0], [-1.0, -1.0, -1.0, -1.0, -1.0]],
        "b": [1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
        "interior_witness": [2.0, 0.5, 0.5, 0.5, 0.5],
    }
    result = runner.invoke(cli, ["run", "--config", _write_config(tmp_path, payload), "--out", str(tmp_path / "out")])
    assert result.exit_code == EXIT_NUMERICAL
    assert "NonInterior" in result.stderr


def test_certify_names_the_violated_condition(runner):
    result = runner.invoke(cli, ["certify", "--config", str(CONFIG_DIR / "certify_s1_violation.json")])
    assert result.exit_code == EXIT_NOT_CERTIFIED
    assert "S1:gamma-cap" in result.stderr
    assert "NOT CERTIFIED" in result.stdout


@pytest.mark.parametrize("name", ["toll_certified.json", "hexagon_certified.json"])
def test_shipped_certified_configs_pass(runner, name):
    result = runner.invoke(cli, ["certify", "--config", str(CONFIG_DIR / name)])
    assert result.exit_code == 0, result.output
    assert "overall: CERTIFIED" in result.stdout


def test_certify_horizon_override(runner):
    result = runner.invoke(cli, ["certify", "--config", str(CONFIG_DIR / "toll_certified.json"), "--K", "10"])
    assert result.exit_code == 0
    assert "for k < 10" in result.stdout


def test_run_writes_identical_artifacts_twice(runner, tmp_path, small_custom_config):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        result = runner.invoke(cli, ["run", "--config", small_custom_config, "--out", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out)
    rows = read_csv(outputs[0] / "trace.csv")
    assert len(rows) == 21
    assert [int(r["k"]) for r in rows] == list(range(21))
    assert rows[0]["alpha"] == ""
    tube = read_csv(outputs[0] / "tube_report.csv")
    assert [int(r["k"]) for r in tube] == [0, 5, 10, 15, 20]
    for name in ("trace.csv", "tube_report.csv", "trace.json"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name
    summary = json.loads((outputs[0] / "summary.json").read_text())
    assert summary["K"] == 20
    assert summary["tube"]["first_exit_index"] is None


def test_run_with_several_seeds_uses_seed_directories(runner, tmp_path, small_custom_config):
    result = runner.invoke(cli, ["run", "--config", small_custom_config, "--out", str(tmp_path / "out"), "--seeds", "0,1"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "seed_0" / "trace.csv").is_file()
    assert (tmp_path / "out" / "seed_1" / "trace.csv").is_file()


def test_diagnose_an_existing_trace(runner, tmp_path, small_custom_config):
    out = tmp_path / "run"
    assert runner.invoke(cli, ["run", "--config", small_custom_config, "--out", str(out)]).exit_code == 0
    result = runner.invoke(
        cli, ["diagnose", "--config", str(out / "trace.json"), "--out", str(tmp_path / "diag"), "--no-tube", "--stationarity"]
    )
    assert result.exit_code == 0, result.output
    rows = read_csv(tmp_path / "diag" / "stationarity.csv")
    assert [int(r["k"]) for r in rows] == [0, 5, 10, 15, 20]
    assert not (tmp_path / "diag" / "tube_report.csv").exists()
    assert "stationarity" in json.loads((tmp_path / "diag" / "diagnostics.json").read_text())


def test_diagnose_rejects_a_foreign_file(runner, tmp_path):
    path = _write_config(tmp_path, {"records": []}, "trace.json")
    assert runner.invoke(cli, ["diagnose", "--config", path]).exit_code == EXIT_CONFIG


def test_bench_toll_with_zero_budget_is_censored(runner, tmp_path, small_toll_config):
    out = tmp_path / "bench"
    result = runner.invoke(
        cli, ["bench-toll", "--config", small_toll_config, "--n-list", "10", "--seeds", "0,1", "--budget-ms", "0", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    rows = read_csv(out / "bench_toll.csv")
    assert [(r["n"], r["seed"]) for r in rows] == [("10", "0"), ("10", "1")]
    assert {r["status"] for r in rows} == {"budget_censored"}
    assert {r["iterations"] for r in rows} == {"0"}


def test_bench_toll_completes_small_cells(runner, tmp_path, small_toll_config):
    out = tmp_path / "bench"
    result = runner.invoke(
        cli, ["bench-toll", "--config", small_toll_config, "--n-list", "10,20", "--seeds", "3", "--iterations", "4", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    rows = read_csv(out / "bench_toll.csv")
    assert [r["n"] for r in rows] == ["10", "20"]
    assert all(r["status"] == "ok" and r["iterations"] == "4" and r["method"] == "bmfo" for r in rows)
    assert all(r["final_normalized_gap"] == "" for r in rows)
    assert "2/2 cells completed" in result.stdout


def test_bench_toll_needs_a_toll_config(runner, small_custom_config, tmp_path):
    result = runner.invoke(cli, ["bench-toll", "--config", small_custom_config, "--out", str(tmp_path)])
    assert result.exit_code == EXIT_CONFIG


def test_bench_hexagon_on_a_short_grid(runner, tmp_path):
    config = _write_config(tmp_path, {"experiment": "hexagon", "hexagon": {"K": 30, "T": 30}})
    out = tmp_path / "hex"
    result = runner.invoke(cli, ["bench-hexagon", "--config", config, "--out", str(out), "--interior", "--sweeps", "5"])
    assert result.exit_code == 0, result.output
    assert len(read_csv(out / "trace.csv")) == 31
    assert len(read_csv(out / "euclidean_trace.csv")) == 31
    assert len(read_csv(out / "interior_stability.csv")) == 6
    summary = json.loads((out / "summary.json").read_text())
    assert summary["eta"] == 0.25
    assert summary["gamma_euclidean"] == pytest.approx(0.7 * summary["gamma_crit0"])
    assert "interior x fixed" in result.stdout
