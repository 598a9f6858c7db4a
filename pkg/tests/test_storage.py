import json

import numpy as np
import pandas as pd
import pytest

from speculative_market.equilibrium import portfolios
from speculative_market.hjb_solver import solve_hjb
from speculative_market.models import CoefficientField
from speculative_market.storage import (
    SWEEP_COLUMNS,
    RunSummary,
    field_columns,
    field_frame,
    spec_hash,
    write_field_csv,
    write_summary,
    write_sweep_csv,
)


@pytest.fixture
def solved(symmetric, coarse):
    field = solve_hjb(symmetric, coarse(symmetric, nx=51))
    return field, portfolios(field, symmetric)


def test_field_frame_layout(solved):
    field, pf = solved
    frame = field_frame(field, pf, 2)
    grid = field.grid
    assert list(frame.columns) == ["t", "x", "v", "theta", "phi_0", "phi_1"] == field_columns(2)
    assert len(frame) == (grid.nt + 1) * grid.nx
    terminal = frame[frame["t"] == grid.T]
    assert terminal["theta"].isna().all() and terminal["phi_0"].isna().all()
    assert not frame[frame["t"] < grid.T]["theta"].isna().any()


def test_field_csv_is_exact_and_reproducible(solved, tmp_path):
    field, pf = solved
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_field_csv(field, pf, 2, str(first))
    write_field_csv(field, pf, 2, str(second))
    assert first.read_bytes() == second.read_bytes()
    back = pd.read_csv(first, float_precision="round_trip")
    np.testing.assert_array_equal(back["v"].to_numpy(), field.values.ravel())


def test_summary_files(tmp_path):
    summary = RunSummary(command="solve", spec_hash="abc", p_dyn=1.25, residual=1e-15, timings={"solve": 0.3})
    write_summary(summary, str(tmp_path))
    payload = json.loads((tmp_path / "summary.json").read_text())
    assert payload["p_dyn"] == 1.25
    assert payload["timings"] == {"solve": 0.3}
    row = pd.read_csv(tmp_path / "summary.csv")
    assert row.loc[0, "p_dyn"] == 1.25
    assert "timings" not in row.columns


def test_sweep_csv_columns(tmp_path):
    path = tmp_path / "sweep.csv"
    write_sweep_csv([{"param": "s-scale", "value": 0.5, "p_dyn": 1.0, "p_sta": 1.5, "gap": 0.5}], str(path))
    assert list(pd.read_csv(path).columns) == SWEEP_COLUMNS


def test_spec_hash_tracks_content(symmetric):
    assert spec_hash(symmetric) == spec_hash(symmetric.with_x0(0.0))
    assert spec_hash(symmetric) != spec_hash(symmetric.with_supply(CoefficientField.constant(1.0)))
    assert len(spec_hash(symmetric)) == 64
