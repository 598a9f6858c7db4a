from pathlib import Path

import pytest

from speculative_market.config import AppConfig, SolverSettings, ensure_dirs, load_settings, load_solver_config, settings_from_config
from speculative_market.errors import ConfigError


SOLVER_YAML = Path(__file__).resolve().parents[1] / "config" / "solver.yaml"


def _cfg(path, **overrides):
    return AppConfig(out_dir=overrides.get("out_dir"), solver_config_path=str(path), seed=overrides.get("seed"))


def test_defaults_without_yaml():
    assert settings_from_config({}) == SolverSettings()


def test_shipped_yaml_matches_defaults():
    assert load_settings(_cfg(SOLVER_YAML)) == SolverSettings()


def test_yaml_sections_override_defaults(tmp_path):
    path = tmp_path / "solver.yaml"
    path.write_text("grid:\n  nx: 401\nsimulation:\n  dt: 0.01\n  antithetic: true\n")
    settings = load_settings(_cfg(path))
    assert settings.nx == 401
    assert settings.sim_dt == 0.01
    assert settings.antithetic is True
    assert settings.cfl_safety == 0.9


def test_environment_overrides_win(tmp_path):
    settings = load_settings(_cfg(SOLVER_YAML, out_dir=str(tmp_path / "runs"), seed=7))
    assert settings.out_dir == str(tmp_path / "runs")
    assert settings.seed == 7


def test_missing_yaml_is_empty(tmp_path):
    assert load_solver_config(_cfg(tmp_path / "nope.yaml")) == {}


def test_unknown_kernel_rejected():
    with pytest.raises(ValueError, match="clearing.kernel"):
        settings_from_config({"clearing": {"kernel": "bisection"}})


def test_ensure_dirs(tmp_path):
    target = tmp_path / "a" / "b"
    ensure_dirs(str(target))
    ensure_dirs(str(target))
    assert target.is_dir()


@pytest.mark.parametrize(
    "text, match",
    [
        ("grid: [unclosed\n", "cannot read"),
        ("- 1\n- 2\n", "mapping of sections"),
        ("grid: 5\n", "must be mappings"),
        ("grid:\n  nx: many\n", "malformed"),
    ],
)
def test_broken_yaml_raises_config_error(tmp_path, text, match):
    path = tmp_path / "solver.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_settings(_cfg(path))
