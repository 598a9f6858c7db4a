import json
import logging

import pandas as pd
import pytest

from speculative_market import runner
from speculative_market.instances import supplied_market
from speculative_market.models import CoefficientField
from speculative_market.runner import EXIT_CFL, EXIT_OK, EXIT_VALIDATION, EXIT_VERIFY_FAILED, main


def _run(*argv, out):
    return main([*argv, "--out-dir", str(out), "--log-level", "WARNING"])


def test_validate(symmetric, market_json, tmp_path):
    assert _run("validate", "--config", market_json(symmetric), out=tmp_path) == EXIT_OK
    negative = symmetric.with_supply(CoefficientField.constant(-1.0))
    assert _run("validate", "--config", market_json(negative, "negative.json"), out=tmp_path) == EXIT_VALIDATION


def test_solve_writes_artifacts(symmetric, market_json, tmp_path):
    out = tmp_path / "solve"
    code = _run("solve", "--config", market_json(symmetric), "--grid-nx", "201", "--static", out=out)
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["p_dyn"] == pytest.approx(1.25, abs=2e-2)
    assert summary["p_sta"] == pytest.approx(1.5, abs=2e-2)
    assert summary["residual"] <= 1e-8
    field = pd.read_csv(out / "field.csv")
    assert list(field.columns) == ["t", "x", "v", "theta", "phi_0", "phi_1"]


def test_solve_is_reproducible(symmetric, market_json, tmp_path):
    config = market_json(symmetric)
    _run("solve", "--config", config, "--grid-nx", "51", out=tmp_path / "a")
    _run("solve", "--config", config, "--grid-nx", "51", out=tmp_path / "b")
    for name in ("field.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_solve_exit_codes(symmetric, market_json, tmp_path):
    config = market_json(symmetric)
    assert _run("solve", "--config", config, "--grid-nx", "101", "--grid-nt", "2", out=tmp_path) == EXIT_CFL
    assert _run("solve", "--config", config, "--grid-nx", "101", "--mode", "zero-vol", out=tmp_path) == EXIT_VALIDATION
    negative = market_json(symmetric.with_supply(CoefficientField.constant(-1.0)), "negative.json")
    assert _run("solve", "--config", negative, "--grid-nx", "101", out=tmp_path) == EXIT_VALIDATION


def test_common_scale_sweep_is_flat(market_json, tmp_path):
    config = market_json(supplied_market())
    code = _run("sweep", "--config", config, "--grid-nx", "101", "--parameter", "common-scale", "--values", "0.5,1,2", out=tmp_path)
    assert code == EXIT_OK
    sweep = pd.read_csv(tmp_path / "sweep.csv")
    assert len(sweep) == 3
    assert sweep["p_dyn"].max() - sweep["p_dyn"].min() <= 1e-6
    assert sweep["p_sta"].max() - sweep["p_sta"].min() <= 1e-6


def test_supply_sweep_lowers_the_price(market_json, tmp_path):
    config = market_json(supplied_market())
    _run("sweep", "--config", config, "--grid-nx", "101", "--parameter", "s-scale", "--values", "0.5,1,2", out=tmp_path)
    p_dyn = pd.read_csv(tmp_path / "sweep.csv")["p_dyn"].tolist()
    assert p_dyn[0] >= p_dyn[1] >= p_dyn[2]


def test_sweep_rejects_bad_values(market_json, tmp_path):
    config = market_json(supplied_market())
    assert _run("sweep", "--config", config, "--parameter", "s-scale", "--values", "1,-2", out=tmp_path) == EXIT_VALIDATION
    # alpha_minus above alpha_plus breaks the cost ordering
    assert _run("sweep", "--config", config, "--grid-nx", "51", "--parameter", "alpha_minus", "--values", "3", out=tmp_path) == EXIT_VALIDATION


def test_simulate_beliefs(symmetric, market_json, tmp_path):
    config = market_json(symmetric)
    code = _run("simulate", "--config", config, "--what", "belief", "--paths", "4000", "--dt", "0.1", "--seed", "3", out=tmp_path)
    assert code == EXIT_OK
    frame = pd.read_csv(tmp_path / "simulate.csv")
    assert frame["target"].tolist() == ["belief_0", "belief_1"]
    assert frame["mean"].tolist() == pytest.approx([2.0, 1.0], abs=0.2)


def test_verify_selected_criterion(tmp_path):
    assert _run("verify", "--quick", "--only", "clearing-duality", out=tmp_path) == EXIT_OK
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["passed"] is True
    assert [c["name"] for c in report["criteria"]] == ["clearing-duality"]


@pytest.mark.slow
def test_verify_detects_a_perturbed_solver(tmp_path):
    assert _run("verify", "--quick", "--only", "symmetric-closed-form", out=tmp_path / "clean") == EXIT_OK
    code = _run("verify", "--quick", "--only", "symmetric-closed-form", "--break", "diffusion", out=tmp_path / "broken")
    assert code == EXIT_VERIFY_FAILED
    report = json.loads((tmp_path / "broken" / "verify.json").read_text())
    assert report["failed"] == ["symmetric-closed-form"]


def test_verify_reports_are_deterministic(tmp_path):
    for name in ("a", "b"):
        _run("verify", "--quick", "--only", "static-duality", "--only", "heterogeneous-costs", out=tmp_path / name)
    assert (tmp_path / "a" / "verify.json").read_text() == (tmp_path / "b" / "verify.json").read_text()


@pytest.mark.parametrize("command", ["validate", "solve", "sweep", "simulate"])
def test_missing_market_config_is_a_validation_error(command, tmp_path, capsys):
    argv = [command, "--config", str(tmp_path / "nowhere.json")]
    if command == "sweep":
        argv += ["--parameter", "s-scale", "--values", "1"]
    assert _run(*argv, out=tmp_path) == EXIT_VALIDATION
    assert "nowhere.json" in capsys.readouterr().err


def test_bad_solver_config_is_a_validation_error(symmetric, market_json, tmp_path):
    config = market_json(symmetric)
    missing = tmp_path / "absent.yaml"
    assert _run("validate", "--config", config, "--solver-config", str(missing), out=tmp_path) == EXIT_VALIDATION
    broken = tmp_path / "broken.yaml"
    broken.write_text("grid: [unclosed\n")
    assert _run("validate", "--config", config, "--solver-config", str(broken), out=tmp_path) == EXIT_VALIDATION
    wrong_kernel = tmp_path / "kernel.yaml"
    wrong_kernel.write_text("clearing:\n  kernel: bisection\n")
    assert _run("validate", "--config", config, "--solver-config", str(wrong_kernel), out=tmp_path) == EXIT_VALIDATION


def test_commands_log_through_tqdm(symmetric, market_json, tmp_path, monkeypatch):
    seen = []

    def record(args, settings):
        seen.extend(type(h).__name__ for h in logging.getLogger().handlers)
        return EXIT_OK

    monkeypatch.setitem(runner.COMMANDS, "validate", record)
    assert main(["validate", "--config", market_json(symmetric), "--out-dir", str(tmp_path)]) == EXIT_OK
    assert any("Tqdm" in name for name in seen)
    assert "StreamHandler" not in seen
