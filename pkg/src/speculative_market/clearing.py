"""Pointwise market clearing.

Agent i's local valuation rate is L_i = ell_i + theta, where ell_i is the
spatial part b_i v_x + 1/2 sigma_i^2 v_xx and theta = d/dt v. Demands are
psi_i(L_i) = alpha_+ (L_i - beta_+)^+ - alpha_- (L_i + beta_-)^-, and theta
is chosen so that total demand equals the local supply. The Hamiltonian is
H = -theta.

Two kernels compute theta: subset enumeration (exponential in n, kept as the
reference) and an exact piecewise-linear root search over the demand
breakpoints. Both work on batches of nodes, shape (m, n).
"""
from __future__ import annotations
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import EnumerationCapError, MarketValidationError, NumericalAbort
from .models import CostArrays, MarketSpec


logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 16
# disjoint (I, J) pairs grow as 3^n
PAIR_ENUMERATION_CAP = 10
TIE_RTOL = 1e-12
CONSISTENCY_RTOL = 1e-12
PARTITION_RTOL = 1e-9
CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class LocalValuations:
    ell: np.ndarray
    supply_here: float

    def __post_init__(self) -> None:
        ell = np.asarray(self.ell, dtype=float)
        if ell.ndim != 1 or ell.size < 1:
            raise ValueError("ell must be a nonempty vector")
        if not np.isfinite(self.supply_here) or self.supply_here < 0.0:
            raise ValueError(f"supply must be finite and >= 0, got {self.supply_here}")
        object.__setattr__(self, "ell", ell)
        object.__setattr__(self, "supply_here", float(self.supply_here))

    @property
    def n(self) -> int:
        return int(self.ell.size)


@dataclass(frozen=True)
class SubsetCoefficients:
    mu: float
    sigma_sq: float
    kappa: float
    shorts: Tuple[int, ...]
    longs: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True, eq=False)
class ClearingResult:
    theta: float
    hamiltonian: float
    optimizer: SubsetCoefficients
    demands: np.ndarray


@dataclass(frozen=True)
class Partition:
    """Short, long and flat agents at a given theta.

    The three groups are disjoint and cover every agent. Without linear costs
    the dead zone is the single point L = 0 and those agents are long.
    """

    shorts: Tuple[int, ...]
    longs: Tuple[int, ...]
    flat: Tuple[int, ...]


def demand(z: np.ndarray, costs: CostArrays) -> np.ndarray:
    """psi_i(z_i) along the trailing agent axis."""
    z = np.asarray(z, dtype=float)
    return np.where(
        z > costs.beta_plus,
        costs.alpha_plus * (z - costs.beta_plus),
        np.where(z < -costs.beta_minus, costs.alpha_minus * (z + costs.beta_minus), 0.0),
    )


@lru_cache(maxsize=None)
def subset_table(n: int) -> np.ndarray:
    """All subsets of range(n) as boolean rows, lexicographic by sorted members (empty set first)."""
    subsets = sorted(c for r in range(n + 1) for c in itertools.combinations(range(n), r))
    table = np.zeros((len(subsets), n), dtype=bool)
    for row, members in enumerate(subsets):
        table[row, list(members)] = True
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def pair_table(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint (I, J) pairs except (empty, empty), ordered by I then J."""
    pairs = []
    for labels in itertools.product((0, 1, 2), repeat=n):
        shorts = tuple(i for i, lab in enumerate(labels) if lab == 1)
        longs = tuple(i for i, lab in enumerate(labels) if lab == 2)
        if shorts or longs:
            pairs.append((shorts, longs))
    pairs.sort()
    short_masks = np.zeros((len(pairs), n), dtype=bool)
    long_masks = np.zeros((len(pairs), n), dtype=bool)
    for row, (shorts, longs) in enumerate(pairs):
        short_masks[row, list(shorts)] = True
        long_masks[row, list(longs)] = True
    short_masks.setflags(write=False)
    long_masks.setflags(write=False)
    return short_masks, long_masks


def _as_batch(ell: np.ndarray, supply: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ell = np.atleast_2d(np.asarray(ell, dtype=float))
    supply = np.broadcast_to(np.asarray(supply, dtype=float), ell.shape[:1])
    return ell, supply


def _first_argmax(scores: np.ndarray) -> np.ndarray:
    best = scores.max(axis=1)
    near = scores >= (best - TIE_RTOL * (1.0 + np.abs(best)))[:, None]
    return np.argmax(near, axis=1)


def _chunks(m: int, per_row: int):
    step = max(1, CHUNK_ELEMENTS // max(per_row, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def hamiltonian_enumerate_batch(
    ell: np.ndarray,
    supply: np.ndarray,
    costs: CostArrays,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """H by maximizing over agent partitions; returns (H, short masks, long masks) per row.

    Linear costs enumerate disjoint (I, J) pairs and keep only pairs that are
    consistent with the demands they imply, which makes the maximum equal to
    minus the smallest clearing root.
    """
    ell, supply = _as_batch(ell, supply)
    m, n = ell.shape
    linear = not costs.is_quadratic
    limit = min(cap, PAIR_ENUMERATION_CAP) if linear else cap
    if n > limit:
        raise EnumerationCapError(n, limit)

    if not linear:
        masks = subset_table(n)
        weights = np.where(masks, costs.alpha_minus, costs.alpha_plus)
        scores = (ell @ weights.T - supply[:, None]) / weights.sum(axis=1)
        idx = _first_argmax(scores)
        shorts = masks[idx]
        return scores[np.arange(m), idx], shorts, ~shorts

    short_masks, long_masks = pair_table(n)
    weights = np.where(short_masks, costs.alpha_minus, np.where(long_masks, costs.alpha_plus, 0.0))
    denom = weights.sum(axis=1)
    offset = (long_masks * costs.alpha_plus * costs.beta_plus).sum(axis=1) - (
        short_masks * costs.alpha_minus * costs.beta_minus
    ).sum(axis=1)
    dead = ~(short_masks | long_masks)

    H = np.empty(m)
    best_short = np.zeros((m, n), dtype=bool)
    best_long = np.zeros((m, n), dtype=bool)
    for rows in _chunks(m, short_masks.shape[0] * n):
        scores = (ell[rows] @ weights.T - supply[rows, None] - offset) / denom
        L = ell[rows, None, :] - scores[:, :, None]
        tol = CONSISTENCY_RTOL * (1.0 + np.abs(L))
        consistent = (
            (~short_masks | (L <= -costs.beta_minus + tol))
            & (~long_masks | (L >= costs.beta_plus - tol))
            & (~dead | ((L >= -costs.beta_minus - tol) & (L <= costs.beta_plus + tol)))
        ).all(axis=-1)
        scores = np.where(consistent, scores, -np.inf)
        idx = _first_argmax(scores)
        H[rows] = scores[np.arange(idx.size), idx]
        best_short[rows] = short_masks[idx]
        best_long[rows] = long_masks[idx]

    lost = ~np.isfinite(H)
    if np.any(lost):
        logger.debug("no consistent pair at %d rows; falling back to the root kernel", int(lost.sum()))
        H[lost] = -clear_root_batch(ell[lost], supply[lost], costs)
    return H, best_short, best_long


def clear_root_batch(ell: np.ndarray, supply: np.ndarray, costs: CostArrays) -> np.ndarray:
    """Smallest theta with sum_i psi_i(ell_i + theta) = supply, exact per row.

    g(theta) is piecewise linear and nondecreasing with breakpoints at
    -ell_i - beta_-^i and -ell_i + beta_+^i. On each segment the active agents
    are fixed, so the candidate root is a closed-form weighted average; the
    answer is the first segment whose candidate lies inside it.
    """
    ell, supply = _as_batch(ell, supply)
    m, n = ell.shape
    breaks = np.sort(np.concatenate([-ell - costs.beta_minus, -ell + costs.beta_plus], axis=1), axis=1)
    mids = np.concatenate([breaks[:, :1] - 1.0, 0.5 * (breaks[:, :-1] + breaks[:, 1:]), breaks[:, -1:] + 1.0], axis=1)

    L = ell[:, None, :] + mids[:, :, None]
    short = L < -costs.beta_minus
    long = L > costs.beta_plus
    slope = np.where(short, costs.alpha_minus, np.where(long, costs.alpha_plus, 0.0))
    shift = np.where(short, costs.beta_minus, np.where(long, -costs.beta_plus, 0.0))
    A = slope.sum(axis=-1)
    C = (slope * (ell[:, None, :] + shift)).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        candidate = (supply[:, None] - C) / A

    lower = np.concatenate([np.full((m, 1), -np.inf), breaks], axis=1)
    upper = np.concatenate([breaks, np.full((m, 1), np.inf)], axis=1)
    tol = (TIE_RTOL * (1.0 + np.abs(breaks).max(axis=1)))[:, None]
    inside = (A > 0.0) & (candidate >= lower - tol) & (candidate <= upper + tol)
    found = inside.any(axis=1)
    if not np.all(found):
        row = int(np.argmin(found))
        raise NumericalAbort(f"no clearing root for ell={ell[row].tolist()} supply={supply[row]}", j=row)
    seg = np.argmax(inside, axis=1)
    return candidate[np.arange(m), seg]


def limit_long_hamiltonian(ell: np.ndarray) -> np.ndarray:
    """alpha_+ -> infinity: the most optimistic agent sets the price."""
    return np.atleast_2d(np.asarray(ell, dtype=float)).max(axis=1)


def limit_short_hamiltonian(
    ell: np.ndarray,
    supply: np.ndarray,
    costs: CostArrays,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> np.ndarray:
    """alpha_- -> 0: max over nonempty long groups J of (sum_J alpha_+(ell - beta_+) - s) / sum_J alpha_+."""
    ell, supply = _as_batch(ell, supply)
    m, n = ell.shape
    ap, bp = costs.alpha_plus, costs.beta_plus
    if np.all(ap == ap[0]) and np.all(bp == bp[0]):
        # equal weights: the best group of size k is the top k agents
        top = -np.sort(-ell, axis=1)
        k = np.arange(1, n + 1)
        scores = (np.cumsum(top, axis=1) - supply[:, None] / ap[0]) / k - bp[0]
        return scores.max(axis=1)
    if n > cap:
        raise EnumerationCapError(n, cap)
    masks = subset_table(n)[1:]
    weights = np.where(masks, ap, 0.0)
    scores = (ell @ weights.T - supply[:, None] - (weights * bp).sum(axis=1)) / weights.sum(axis=1)
    return scores.max(axis=1)


def _point_coefficients(point: Tuple[float, float], spec: MarketSpec) -> Tuple[np.ndarray, np.ndarray, float]:
    t, x = point
    b = spec.drifts(t, x).reshape(spec.n)
    sigma = spec.volatilities(t, x).reshape(spec.n)
    return b, sigma * sigma, float(spec.supply.evaluate(t, x))


def _members(mask: Sequence[bool]) -> Tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(mask))


def subset_coefficients(
    shorts: Sequence[int],
    point: Tuple[float, float],
    spec: MarketSpec,
    longs: Optional[Sequence[int]] = None,
) -> SubsetCoefficients:
    """mu, Sigma^2 and kappa of the controlled dynamics when I = shorts (and J = longs) at point."""
    n = spec.n
    short_mask = np.zeros(n, dtype=bool)
    short_mask[list(shorts)] = True
    if longs is None:
        long_mask = ~short_mask
    else:
        long_mask = np.zeros(n, dtype=bool)
        long_mask[list(longs)] = True
        if np.any(short_mask & long_mask):
            raise MarketValidationError("short and long groups must be disjoint")
    costs = spec.cost_arrays()
    weights = np.where(short_mask, costs.alpha_minus, np.where(long_mask, costs.alpha_plus, 0.0))
    denom = weights.sum()
    if denom <= 0.0:
        raise MarketValidationError("the pair (I, J) carries no weight; at least one agent must trade")
    b, sigma_sq, s = _point_coefficients(point, spec)
    offset = (long_mask * costs.alpha_plus * costs.beta_plus).sum() - (short_mask * costs.alpha_minus * costs.beta_minus).sum()
    return SubsetCoefficients(
        mu=float(weights @ b / denom),
        sigma_sq=float(weights @ sigma_sq / denom),
        kappa=float((s + offset) / denom),
        shorts=_members(short_mask),
        longs=None if longs is None else _members(long_mask),
    )


def optimal_partition(vals: LocalValuations, theta: float, costs: Optional[CostArrays] = None) -> Partition:
    L = vals.ell + theta
    if costs is None or costs.is_quadratic:
        return Partition(_members(L < 0.0), _members(L >= 0.0), ())
    return Partition(
        _members(L < -costs.beta_minus),
        _members(L > costs.beta_plus),
        _members((L >= -costs.beta_minus) & (L <= costs.beta_plus)),
    )


def _result(vals: LocalValuations, theta: float, optimizer: SubsetCoefficients, costs: CostArrays) -> ClearingResult:
    return ClearingResult(
        theta=float(theta),
        hamiltonian=float(-theta),
        optimizer=optimizer,
        demands=demand(vals.ell + theta, costs),
    )


def clear_enumerate(
    vals: LocalValuations,
    point: Tuple[float, float],
    spec: MarketSpec,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ClearingResult:
    costs = spec.cost_arrays()
    H, shorts, longs = hamiltonian_enumerate_batch(vals.ell[None, :], np.array([vals.supply_here]), costs, cap)
    theta = -float(H[0])
    if costs.is_quadratic:
        optimizer = subset_coefficients(optimal_partition(vals, theta).shorts, point, spec)
    else:
        optimizer = subset_coefficients(_members(shorts[0]), point, spec, _members(longs[0]))
    return _result(vals, theta, optimizer, costs)


def clear_root(vals: LocalValuations, point: Tuple[float, float], spec: MarketSpec) -> ClearingResult:
    costs = spec.cost_arrays()
    theta = float(clear_root_batch(vals.ell[None, :], np.array([vals.supply_here]), costs)[0])
    if costs.is_quadratic:
        optimizer = subset_coefficients(optimal_partition(vals, theta).shorts, point, spec)
    else:
        # agents sitting on a dead-zone edge belong to the group whose edge they touch
        L = vals.ell + theta
        tol = PARTITION_RTOL * (1.0 + np.abs(L))
        short_mask = L <= -costs.beta_minus + tol
        long_mask = (L >= costs.beta_plus - tol) & ~short_mask
        optimizer = subset_coefficients(_members(short_mask), point, spec, _members(long_mask))
    return _result(vals, theta, optimizer, costs)
