import numpy as np
import pytest

from speculative_market.errors import CFLError, EnumerationCapError, MarketValidationError, NumericalAbort
from speculative_market.grid import GridSpec, PriceField
from speculative_market.hjb_solver import (
    GridAssignment,
    constant_assignment,
    optimal_assignment,
    random_assignment,
    solve_hjb,
    solve_linear,
    solve_zero_vol,
    spatial_differences,
)
from speculative_market.instances import delay_market
from speculative_market.models import PayoffSpec
from speculative_market.oracles import example_delay, symmetric_value_function
from speculative_market.static_market import static_limits

from conftest import single_agent


def test_grid_respects_cfl(symmetric):
    grid = GridSpec.for_spec(symmetric, nx=201)
    assert (grid.x_lo, grid.x_hi) == pytest.approx((-13.0, 13.0))
    assert 0.8 < grid.cfl_number(symmetric) <= 0.9 + 1e-12
    refined = grid.refined()
    assert (refined.nx, refined.nt) == (401, 4 * grid.nt)
    assert refined.cfl_number(symmetric) <= grid.cfl_number(symmetric) + 1e-12


def test_cfl_violation_raises(symmetric):
    grid = GridSpec(-13.0, 13.0, 201, 5, 1.0)
    with pytest.raises(CFLError):
        solve_hjb(symmetric, grid)


def test_degenerate_markets_get_the_upwind_scheme(delay, symmetric):
    assert GridSpec.for_spec(delay, nx=101).scheme == "degenerate-upwind"
    assert GridSpec.for_spec(symmetric, nx=101).scheme == "explicit-upwind"


def test_spatial_differences_are_exact_on_quadratics():
    xs = np.linspace(-1.0, 1.0, 5)
    d1, d2 = spatial_differences(xs * xs, 0.5)
    np.testing.assert_allclose(d1[1:-1], 2.0 * xs[1:-1], atol=1e-12)
    np.testing.assert_allclose(d2[1:-1], 2.0, atol=1e-12)


def test_edges_use_one_sided_first_differences():
    xs = np.linspace(-1.0, 1.0, 5)
    d1, d2 = spatial_differences(xs * xs, 0.5)
    assert (d1[0], d1[-1]) == pytest.approx((-1.5, 1.5))
    assert (d2[0], d2[-1]) == (0.0, 0.0)
    d1, d2 = spatial_differences(3.0 * xs + 1.0, 0.5)
    np.testing.assert_allclose(d1, 3.0, atol=1e-12)
    np.testing.assert_allclose(d2, 0.0, atol=1e-12)


def test_symmetric_solution_tracks_closed_form_up_to_the_edges(symmetric, coarse):
    grid = coarse(symmetric)
    field = solve_hjb(symmetric, grid)
    expected = np.array([symmetric_value_function(0.0, x, 1.0, 0.0, 1.0, 1.0, 1.0) for x in grid.xs])
    np.testing.assert_allclose(field.values[0], expected, rtol=2e-2)
    inner = np.abs(grid.xs) <= 5.0
    np.testing.assert_allclose(field.values[0][inner], expected[inner], atol=5e-3)


def test_constant_payoff_stays_constant(symmetric, coarse):
    spec = symmetric.with_payoff(PayoffSpec.constant(3.0))
    field = solve_hjb(spec, coarse(spec))
    np.testing.assert_allclose(field.values, 3.0, atol=1e-12)


def test_single_agent_is_the_heat_equation():
    spec = single_agent(0.0, 1.0)
    field = solve_hjb(spec, GridSpec.for_spec(spec, nx=201))
    assert field.p_dyn(0.0) == pytest.approx(1.0, abs=1e-6)


def test_symmetric_closed_form(symmetric, coarse):
    field = solve_hjb(symmetric, coarse(symmetric))
    assert field.p_dyn(0.0) == pytest.approx(1.25, abs=5e-3)


def test_kernels_agree(supplied, coarse):
    grid = coarse(supplied, nx=101)
    root = solve_hjb(supplied, grid, kernel="root")
    enum = solve_hjb(supplied, grid, kernel="enumerate")
    np.testing.assert_allclose(root.values, enum.values, atol=1e-10)


def test_enumeration_cap_surfaces(supplied, coarse):
    with pytest.raises(EnumerationCapError):
        solve_hjb(supplied, coarse(supplied, nx=101), kernel="enumerate", cap=1)


def test_unknown_mode(symmetric, coarse):
    with pytest.raises(ValueError, match="unknown mode"):
        solve_hjb(symmetric, coarse(symmetric, nx=101), mode="bubble")


def test_non_finite_payoff_aborts(symmetric, coarse):
    spec = symmetric.with_payoff(PayoffSpec(kind="table", xs=(-20.0, 20.0), values=(0.0, np.inf)))
    with pytest.raises(NumericalAbort):
        solve_hjb(spec, coarse(symmetric, nx=101))


def test_long_and_short_limits_coincide_without_supply(symmetric, coarse):
    grid = coarse(symmetric, nx=101)
    long_ = solve_hjb(symmetric, grid, "limit-long")
    short = solve_hjb(symmetric, grid, "limit-short")
    np.testing.assert_allclose(long_.values, short.values, atol=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("nx", [201, 401])
@pytest.mark.parametrize("x", [0.0, 1.8, 3.0])
def test_delay_example_without_volatility(delay, nx, x):
    grid = GridSpec.for_spec(delay, nx=nx)
    field = solve_zero_vol(delay, grid)
    expected = example_delay(x, 8.0, 1.0).p_dyn
    assert float(field.at(0.0, x)) == pytest.approx(expected, abs=4.0 * grid.dx)


@pytest.mark.slow
def test_delay_gap_between_sharing_regions(delay):
    # x = 1.8 sits between |x| = s/4 - T/2 and |x| = s/4: waiting is worth 0.4
    x = 1.8
    grid = GridSpec.for_spec(delay, nx=401)
    field = solve_zero_vol(delay, grid)
    p_sta = static_limits(np.array([(x + 1.0) ** 2, (x - 1.0) ** 2]), delay_market(x0=x))[1]
    oracle = example_delay(x, 8.0, 1.0)
    assert p_sta == pytest.approx(oracle.p_sta, abs=1e-12)
    gap = p_sta - float(field.at(0.0, x))
    assert gap > 0.0
    assert gap == pytest.approx(oracle.gap, abs=4.0 * grid.dx)
    assert oracle.gap == pytest.approx(0.4)


@pytest.mark.slow
def test_zero_supply_moves_towards_larger_states():
    spec = delay_market(s=0.0)
    field = solve_zero_vol(spec, GridSpec.for_spec(spec, nx=401))
    assert float(field.at(0.0, 1.0)) == pytest.approx(4.0, abs=5e-2)


def test_zero_vol_preconditions(symmetric, delay, coarse):
    with pytest.raises(MarketValidationError, match="degenerate"):
        solve_zero_vol(symmetric, coarse(symmetric, nx=101))
    explicit = GridSpec.for_spec(delay, nx=101)
    explicit = GridSpec(explicit.x_lo, explicit.x_hi, explicit.nx, explicit.nt, explicit.T, "explicit-upwind")
    with pytest.raises(MarketValidationError, match="degenerate-upwind"):
        solve_zero_vol(delay, explicit)


def test_linear_solve_reproduces_full_solve(supplied, coarse):
    grid = coarse(supplied, nx=101)
    field = solve_hjb(supplied, grid)
    linear = solve_linear(supplied, grid, optimal_assignment(field, supplied))
    np.testing.assert_allclose(linear.values, field.values, atol=1e-8)


def test_linear_single_agent_matches_full():
    spec = single_agent(0.5, 1.0)
    grid = GridSpec.for_spec(spec, nx=101)
    linear = solve_linear(spec, grid, constant_assignment((), 1))
    np.testing.assert_allclose(linear.values, solve_hjb(spec, grid).values, atol=1e-12)


def test_equal_costs_make_assignments_irrelevant(symmetric, coarse):
    grid = coarse(symmetric, nx=101)
    first = solve_linear(symmetric, grid, constant_assignment((0,), 2))
    second = solve_linear(symmetric, grid, random_assignment(grid, 2, seed=3))
    np.testing.assert_allclose(first.values, second.values, atol=1e-12)


def test_fixed_assignments_never_beat_the_equilibrium(supplied, coarse):
    grid = coarse(supplied, nx=101)
    best = solve_hjb(supplied, grid).p_dyn(0.0)
    for seed in range(5):
        fixed = solve_linear(supplied, grid, random_assignment(grid, 2, seed=seed)).p_dyn(0.0)
        assert fixed <= best + 1e-10


def test_grid_assignment_lookup():
    grid = GridSpec(0.0, 1.0, 3, 2, 1.0)
    masks = np.zeros((2, 3, 1), dtype=bool)
    masks[1, 2, 0] = True
    assignment = GridAssignment(masks, grid)
    assert assignment(0.6, np.array([0.9]))[0, 0]
    assert not assignment(0.4, np.array([0.9]))[0, 0]
    # t = T reads the last step
    assert assignment(1.0, np.array([1.0]))[0, 0]
    with pytest.raises(ValueError):
        GridAssignment(np.zeros((3, 3, 1), dtype=bool), grid)


def test_price_field_clamps_lookups():
    grid = GridSpec(0.0, 1.0, 3, 2, 1.0)
    values = np.tile(np.array([0.0, 1.0, 2.0]), (3, 1))
    field = PriceField(values=values, theta=np.zeros((2, 3)), grid=grid, mode="full")
    assert float(field.at(0.5, 0.25)) == pytest.approx(0.5)
    assert float(field.at(2.0, 5.0)) == pytest.approx(2.0)
    assert field.row_index(0.74) == 1
    with pytest.raises(ValueError):
        PriceField(values=values, theta=np.zeros((3, 3)), grid=grid, mode="full")
