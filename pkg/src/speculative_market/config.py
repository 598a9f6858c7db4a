import os
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional
import yaml
from dotenv import load_dotenv

from .errors import ConfigError


load_dotenv()


DEFAULTS: Dict[str, Dict[str, Any]] = {
    "grid": {"nx": 801, "cfl_safety": 0.9, "width_multiplier": 1.0, "sigma_min": 1e-6},
    "clearing": {"enumeration_cap": 16, "kernel": "root"},
    "simulation": {
        "paths": 100_000,
        "dt": None,
        "seed": 42,
        "antithetic": False,
        "block_size": 4096,
        "workers": 1,
    },
    "output": {"dir": "out"},
}


@dataclass
class AppConfig:
    out_dir: Optional[str] = os.getenv("SPECMARKET_OUT_DIR")
    solver_config_path: str = os.path.abspath(
        os.getenv("SPECMARKET_SOLVER_CONFIG", os.path.join(os.getcwd(), "config", "solver.yaml"))
    )
    seed: Optional[int] = int(os.environ["SPECMARKET_SEED"]) if os.getenv("SPECMARKET_SEED") else None
    log_level: str = os.getenv("SPECMARKET_LOG_LEVEL", "INFO")


@dataclass(frozen=True)
class SolverSettings:
    nx: int = 801
    cfl_safety: float = 0.9
    width_multiplier: float = 1.0
    sigma_min: float = 1e-6
    enumeration_cap: int = 16
    kernel: str = "root"
    paths: int = 100_000
    sim_dt: Optional[float] = None
    seed: int = 42
    antithetic: bool = False
    block_size: int = 4096
    workers: int = 1
    out_dir: str = "out"


def ensure_dirs(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def load_solver_config(cfg: AppConfig) -> Dict[str, Any]:
    path = cfg.solver_config_path
    if not os.path.exists(path):
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: cannot read solver config ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping of sections, got {type(raw).__name__}")
    return raw


def settings_from_config(raw: Dict[str, Any], cfg: Optional[AppConfig] = None) -> SolverSettings:
    """Merge YAML sections over DEFAULTS, then environment overrides from AppConfig."""
    try:
        merged = {section: {**values, **(raw.get(section) or {})} for section, values in DEFAULTS.items()}
    except TypeError as e:
        raise ConfigError(f"solver config sections must be mappings: {e}") from e
    grid, clearing, sim = merged["grid"], merged["clearing"], merged["simulation"]
    kernel = str(clearing["kernel"])
    if kernel not in ("root", "enumerate"):
        raise ConfigError(f"clearing.kernel must be 'root' or 'enumerate', got {kernel!r}")
    try:
        settings = SolverSettings(
            nx=int(grid["nx"]),
            cfl_safety=float(grid["cfl_safety"]),
            width_multiplier=float(grid["width_multiplier"]),
            sigma_min=float(grid["sigma_min"]),
            enumeration_cap=int(clearing["enumeration_cap"]),
            kernel=kernel,
            paths=int(sim["paths"]),
            sim_dt=None if sim["dt"] is None else float(sim["dt"]),
            seed=int(sim["seed"]),
            antithetic=bool(sim["antithetic"]),
            block_size=int(sim["block_size"]),
            workers=int(sim["workers"]),
            out_dir=str(merged["output"]["dir"]),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"malformed solver config: {e}") from e
    if cfg is not None:
        overrides: Dict[str, Any] = {}
        if cfg.out_dir:
            overrides["out_dir"] = cfg.out_dir
        if cfg.seed is not None:
            overrides["seed"] = cfg.seed
        if overrides:
            settings = replace(settings, **overrides)
    return settings


def load_settings(cfg: Optional[AppConfig] = None) -> SolverSettings:
    cfg = cfg or AppConfig()
    return settings_from_config(load_solver_config(cfg), cfg)
