from __future__ import annotations
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .equilibrium import PortfolioField
from .grid import PriceField
from .models import MarketSpec


FLOAT_FORMAT = "%.17g"
BASE_COLUMNS = ["t", "x", "v", "theta"]
SWEEP_COLUMNS = ["param", "value", "p_dyn", "p_sta", "gap"]


@dataclass
class RunSummary:
    command: str
    spec_hash: str
    p_dyn: Optional[float] = None
    p_sta: Optional[float] = None
    gap: Optional[float] = None
    residual: Optional[float] = None
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_row(self) -> dict:
        # wall-clock timings stay out of the CSV so reruns are byte-identical
        return {
            "command": self.command,
            "spec_hash": self.spec_hash,
            "p_dyn": self.p_dyn,
            "p_sta": self.p_sta,
            "gap": self.gap,
            "residual": self.residual,
        }


def spec_hash(spec: MarketSpec) -> str:
    canonical = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def field_columns(n: int) -> List[str]:
    return BASE_COLUMNS + [f"phi_{i}" for i in range(n)]


def field_frame(field_: PriceField, pf: Optional[PortfolioField], n: int) -> pd.DataFrame:
    """Long table over every (t_k, x_j); theta and phi are empty on the terminal row."""
    grid = field_.grid
    tt, xx = np.meshgrid(grid.ts, grid.xs, indexing="ij")
    pad = np.full((1, grid.nx), np.nan)
    data: Dict[str, np.ndarray] = {
        "t": tt.ravel(),
        "x": xx.ravel(),
        "v": field_.values.ravel(),
        "theta": np.vstack([field_.theta, pad]).ravel(),
    }
    for i in range(n):
        phi = pf.phi[i] if pf is not None else np.full((grid.nt, grid.nx), np.nan)
        data[f"phi_{i}"] = np.vstack([phi, pad]).ravel()
    return pd.DataFrame(data, columns=field_columns(n))


def write_field_csv(field_: PriceField, pf: Optional[PortfolioField], n: int, path: str) -> None:
    field_frame(field_, pf, n).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_sweep_csv(rows: List[Dict[str, Any]], path: str) -> None:
    pd.DataFrame(rows, columns=SWEEP_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_summary(summary: RunSummary, out_dir: str) -> None:
    """summary.json plus a one-row summary.csv carrying the same numbers."""
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(asdict(summary), f, indent=2, sort_keys=True)
        f.write("\n")
    pd.DataFrame([summary.to_row()]).to_csv(os.path.join(out_dir, "summary.csv"), index=False, float_format=FLOAT_FORMAT)


def write_json(payload: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
