"""Comfort valuations, welfare, outcome selection, and budget-balanced transfers.

Each round the occupants of a shared AC zone report one of nine discrete
comfort types. The engine evaluates the three candidate set-point changes
(one degree down, hold, one degree up), picks the one maximizing total
declared value net of the incremental energy cost, and charges each occupant
an expected-externality transfer. Transfers sum exactly to the incremental
cost, so the building never runs a surplus or deficit on deviations from the
base temperature, and truthful reporting maximizes each occupant's interim
expected net benefit when everyone else reports truthfully.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .energy import CostVector

# Welfare values closer than this are treated as tied and resolved by the
# deterministic tie-break (lower incremental cost, then stay > cooler > warmer).
WELFARE_TIE_TOL = 1e-12

# Exhaustive expectation over opponents is used up to this group size.
EXHAUSTIVE_MAX_OCCUPANTS = 6


class MechanismError(Exception):
    """Base class for mechanism-layer failures."""


class InfeasibleOutcomeError(MechanismError):
    """An outcome excluded by the temperature bounds was passed in."""


class ParamsError(MechanismError):
    """Transfer parameters violate a structural constraint."""


class DegenerateGroupError(MechanismError):
    """The operation needs at least two occupants."""


class PreferenceGroup(str, Enum):
    COOLER = "cooler"
    CURRENT = "current"
    WARMER = "warmer"


class OutcomeKind(str, Enum):
    COOLER = "cooler"
    STAY = "stay"
    WARMER = "warmer"

    @property
    def column(self) -> int:
        """Column index into a valuation table (cooler, stay, warmer)."""
        return _COLUMNS[self]

    @property
    def step(self) -> int:
        return _STEPS[self]

    @property
    def tiebreak_rank(self) -> int:
        return _TIEBREAK[self]


_COLUMNS = {OutcomeKind.COOLER: 0, OutcomeKind.STAY: 1, OutcomeKind.WARMER: 2}
_STEPS = {OutcomeKind.COOLER: -1, OutcomeKind.STAY: 0, OutcomeKind.WARMER: 1}
_TIEBREAK = {OutcomeKind.STAY: 0, OutcomeKind.COOLER: 1, OutcomeKind.WARMER: 2}


@dataclass(frozen=True)
class Outcome:
    """A candidate set-point change: the kind of move and the resulting °C."""

    kind: OutcomeKind
    setpoint: int

    @classmethod
    def from_t0(cls, kind: OutcomeKind, t0: int) -> "Outcome":
        return cls(kind, t0 + kind.step)


@dataclass(frozen=True)
class ComfortType:
    """One of the nine reportable comfort preferences."""

    id: int
    group: PreferenceGroup
    label: str


COMFORT_TYPES: tuple[ComfortType, ...] = (
    ComfortType(1, PreferenceGroup.COOLER, "Prefer cooler (1)"),
    ComfortType(2, PreferenceGroup.COOLER, "Prefer cooler (2)"),
    ComfortType(3, PreferenceGroup.COOLER, "Prefer cooler (3)"),
    ComfortType(4, PreferenceGroup.CURRENT, "Prefer current (1)"),
    ComfortType(5, PreferenceGroup.CURRENT, "Prefer current (2)"),
    ComfortType(6, PreferenceGroup.CURRENT, "Prefer current (3)"),
    ComfortType(7, PreferenceGroup.WARMER, "Prefer warmer (1)"),
    ComfortType(8, PreferenceGroup.WARMER, "Prefer warmer (2)"),
    ComfortType(9, PreferenceGroup.WARMER, "Prefer warmer (3)"),
)

N_TYPES = len(COMFORT_TYPES)


def comfort_type(type_id: int) -> ComfortType:
    if not 1 <= type_id <= N_TYPES:
        raise MechanismError(f"comfort type id must be 1..{N_TYPES}, got {type_id}")
    return COMFORT_TYPES[type_id - 1]


# Default willingness-to-pay ($) per type (rows 1..9) and outcome
# (columns: one degree cooler, stay, one degree warmer).
DEFAULT_VALUATIONS = np.array(
    [
        [0.2, 0.0, -0.2],
        [0.4, 0.0, -0.2],
        [0.4, -0.2, -0.4],
        [0.0, 0.4, 0.0],
        [0.0, 0.2, -0.2],
        [-0.2, 0.2, 0.0],
        [-0.2, 0.0, 0.2],
        [-0.2, 0.0, 0.4],
        [-0.4, -0.2, 0.4],
    ]
)

_GROUP_COLUMN = {
    PreferenceGroup.COOLER: 0,
    PreferenceGroup.CURRENT: 1,
    PreferenceGroup.WARMER: 2,
}

VALUATION_BOUND = 0.4

CSV_HEADER = ["type_id", "cooler", "stay", "warmer"]


@dataclass(frozen=True)
class ValuationTable:
    """9x3 matrix of willingness-to-pay ($) per comfort type and outcome."""

    values: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.values, dtype=float)
        if m.shape != (N_TYPES, 3):
            raise MechanismError(f"valuation table must be {N_TYPES}x3, got {m.shape}")
        if np.any(np.abs(m) > VALUATION_BOUND + 1e-12):
            raise MechanismError(
                f"valuation entries must lie in [-{VALUATION_BOUND}, {VALUATION_BOUND}]"
            )
        for ctype in COMFORT_TYPES:
            row = m[ctype.id - 1]
            if row.argmax() != _GROUP_COLUMN[ctype.group]:
                raise MechanismError(
                    f"row {ctype.id} must peak in its own group column ({ctype.group.value})"
                )
        object.__setattr__(self, "values", m)

    @classmethod
    def default(cls) -> "ValuationTable":
        return cls(DEFAULT_VALUATIONS.copy())

    @classmethod
    def from_csv(cls, path) -> "ValuationTable":
        m = np.full((N_TYPES, 3), np.nan)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != CSV_HEADER:
                raise MechanismError(
                    f"valuation CSV must start with header {','.join(CSV_HEADER)}"
                )
            for lineno, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                try:
                    type_id = int(row[0])
                    vals = [float(v) for v in row[1:4]]
                except (ValueError, IndexError) as exc:
                    raise MechanismError(f"line {lineno}: cannot parse row: {exc}") from exc
                if not 1 <= type_id <= N_TYPES:
                    raise MechanismError(f"line {lineno}: type_id {type_id} out of range")
                m[type_id - 1] = vals
        if np.isnan(m).any():
            missing = [i + 1 for i in range(N_TYPES) if np.isnan(m[i]).any()]
            raise MechanismError(f"valuation CSV missing rows for type ids {missing}")
        return cls(m)

    def value(self, type_id: int, kind: OutcomeKind) -> float:
        return float(self.values[type_id - 1, kind.column])


@dataclass(frozen=True)
class TypeProfile:
    """One comfort report per occupant, in occupant order."""

    occupants: tuple[str, ...]
    type_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.occupants) != len(self.type_ids):
            raise MechanismError("one report per occupant required")
        if len(self.occupants) == 0:
            raise MechanismError("profile needs at least one occupant")
        if len(set(self.occupants)) != len(self.occupants):
            raise MechanismError("occupant ids must be distinct")
        for t in self.type_ids:
            if not 1 <= t <= N_TYPES:
                raise MechanismError(f"type id {t} out of range 1..{N_TYPES}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> "TypeProfile":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def n(self) -> int:
        return len(self.occupants)

    def types(self) -> list[ComfortType]:
        return [comfort_type(t) for t in self.type_ids]


@dataclass(frozen=True)
class MechanismParams:
    """Cost shares (alpha) and externality-redistribution weights (beta).

    alpha is a length-n simplex vector; beta is n x n with zero diagonal and
    every column summing to one over the off-diagonal entries. Those two
    constraints are exactly what make the transfers ex-post budget balanced.
    """

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def validate(self, n: int | None = None, tol: float = 1e-9) -> None:
        a, b = self.alpha, self.beta
        if n is not None and a.shape != (n,):
            raise ParamsError(f"alpha must have length {n}, got shape {a.shape}")
        if b.shape != (a.shape[0], a.shape[0]):
            raise ParamsError(f"beta must be {a.shape[0]}x{a.shape[0]}, got {b.shape}")
        if abs(a.sum() - 1.0) > tol:
            raise ParamsError(f"alpha must sum to 1 (got {a.sum()!r})")
        if np.any(a < -tol):
            raise ParamsError("alpha entries must be nonnegative")
        if np.any(np.abs(np.diag(b)) > tol):
            raise ParamsError("beta diagonal must be zero")
        colsums = b.sum(axis=0)
        bad = np.nonzero(np.abs(colsums - 1.0) > tol)[0]
        if bad.size:
            raise ParamsError(
                f"beta column {bad[0]} must sum to 1 over i != j (got {colsums[bad[0]]!r})"
            )

    @classmethod
    def standard(cls, n: int) -> "MechanismParams":
        """Equal cost shares and uniform redistribution: the classic transfer rule."""
        if n < 2:
            raise DegenerateGroupError("standard params need n >= 2")
        alpha = np.full(n, 1.0 / n)
        beta = np.full((n, n), 1.0 / (n - 1))
        np.fill_diagonal(beta, 0.0)
        return cls(alpha, beta)


@dataclass(frozen=True)
class WelfareBreakdown:
    sum_valuations: float
    incremental_cost: float
    welfare: float


def valuation(table: ValuationTable, ctype: ComfortType, outcome: Outcome) -> float:
    """Willingness to pay of one occupant type for one outcome. Pure lookup."""
    return table.value(ctype.id, outcome.kind)


def welfare(
    profile: TypeProfile,
    outcome: Outcome,
    costs: "CostVector",
    table: ValuationTable,
) -> WelfareBreakdown:
    """Total declared value minus the incremental energy cost of an outcome."""
    if not costs.is_feasible(outcome.kind):
        raise InfeasibleOutcomeError(
            f"outcome {outcome.kind.value} is not in the feasible set this round"
        )
    col = outcome.kind.column
    total = float(sum(table.values[t - 1, col] for t in profile.type_ids))
    delta = costs.delta(outcome.kind)
    return WelfareBreakdown(total, delta, total - delta)


def selection_order(costs: "CostVector") -> list[Outcome]:
    """Feasible outcomes in deterministic tie-break priority.

    Lower incremental cost wins ties; residual ties resolve stay > cooler > warmer.
    """
    feas = costs.feasible_outcomes()
    if not feas:
        raise MechanismError("feasible outcome set is empty")
    return sorted(feas, key=lambda o: (costs.delta(o.kind), o.kind.tiebreak_rank))


def select_outcome(
    profile: TypeProfile, costs: "CostVector", table: ValuationTable
) -> Outcome:
    """Welfare-maximizing feasible outcome under the deterministic tie-break."""
    best = None
    best_w = -np.inf
    for outcome in selection_order(costs):
        w = welfare(profile, outcome, costs, table).welfare
        if w > best_w + WELFARE_TIE_TOL:
            best, best_w = outcome, w
    return best


@dataclass(frozen=True)
class JointDecision:
    """Vectorized round decisions for a grid of joint type profiles."""

    order: tuple[Outcome, ...]      # feasible outcomes in tie-break priority
    choice: np.ndarray              # (M,) index into `order`
    utilities: np.ndarray           # (M, n) per-occupant value of the chosen outcome
    delta: np.ndarray               # (M,) incremental cost of the chosen outcome


def decide_many(
    types_grid: np.ndarray, costs: "CostVector", table: ValuationTable
) -> JointDecision:
    """Apply the outcome rule to every row of a (M, n) grid of type indices (0-based).

    Uses the same scan as select_outcome so vectorized and scalar paths agree
    bit-for-bit on ties.
    """
    order = tuple(selection_order(costs))
    m = types_grid.shape[0]
    u_cols = []
    w_cols = []
    for outcome in order:
        u = table.values[types_grid, outcome.kind.column].sum(axis=1)
        u_cols.append(u)
        w_cols.append(u - costs.delta(outcome.kind))
    choice = np.zeros(m, dtype=np.intp)
    best = w_cols[0].copy()
    for k in range(1, len(order)):
        better = w_cols[k] > best + WELFARE_TIE_TOL
        choice[better] = k
        best[better] = w_cols[k][better]
    deltas = np.array([costs.delta(o.kind) for o in order])
    cols = np.array([o.kind.column for o in order])
    utilities = table.values[types_grid, cols[choice][:, None]]
    return JointDecision(order, choice, utilities, deltas[choice])


@functools.lru_cache(maxsize=8)
def enumerate_type_grid(n: int) -> np.ndarray:
    """All joint type-index profiles for n occupants, shape (9**n, n)."""
    grids = np.meshgrid(*[np.arange(N_TYPES)] * n, indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, n).astype(np.int8)


def joint_probabilities(types_grid: np.ndarray, prior_matrix: np.ndarray) -> np.ndarray:
    """Product probability of each grid row under independent per-occupant priors."""
    p = np.ones(types_grid.shape[0])
    for i in range(types_grid.shape[1]):
        p *= prior_matrix[i, types_grid[:, i]]
    return p


def _check_prior_matrix(prior_matrix: np.ndarray, n: int) -> np.ndarray:
    pm = np.asarray(prior_matrix, dtype=float)
    if pm.shape != (n, N_TYPES):
        raise MechanismError(f"prior matrix must be {n}x{N_TYPES}, got {pm.shape}")
    if np.any(pm < -1e-12) or np.any(np.abs(pm.sum(axis=1) - 1.0) > 1e-9):
        raise MechanismError("each prior row must be a probability vector")
    return pm


def expected_externality(
    i: int,
    type_id: int,
    prior_matrix: np.ndarray,
    params: MechanismParams,
    costs: "CostVector",
    table: ValuationTable,
    *,
    samples: int | None = None,
    seed: int | None = None,
) -> float:
    """Expected cost-adjusted value to everyone else when occupant i reports type_id.

    The expectation is over the other occupants' types, drawn independently
    from their priors; the outcome inside is the welfare-maximizing one for
    the full (reported) profile. Exhaustive enumeration for small groups,
    seeded Monte Carlo above EXHAUSTIVE_MAX_OCCUPANTS.
    """
    n = prior_matrix.shape[0]
    pm = _check_prior_matrix(prior_matrix, n)
    if n == 1:
        return 0.0
    alpha = params.alpha
    others = [j for j in range(n) if j != i]
    if n <= EXHAUSTIVE_MAX_OCCUPANTS and samples is None:
        opp_grid = enumerate_type_grid(n - 1)
        weights = joint_probabilities(opp_grid, pm[others])
    else:
        if samples is None or seed is None:
            raise MechanismError(
                f"groups above {EXHAUSTIVE_MAX_OCCUPANTS} occupants need an explicit "
                "Monte Carlo sample count and seed"
            )
        rng = np.random.default_rng(seed)
        opp_grid = np.stack(
            [rng.choice(N_TYPES, size=samples, p=pm[j]) for j in others], axis=1
        ).astype(np.int8)
        weights = np.full(samples, 1.0 / samples)
    full = np.empty((opp_grid.shape[0], n), dtype=np.int8)
    full[:, others] = opp_grid
    full[:, i] = type_id - 1
    decision = decide_many(full, costs, table)
    own = decision.utilities[:, i]
    total_u = decision.utilities.sum(axis=1)
    others_share = alpha.sum() - alpha[i]
    values = (total_u - own) - others_share * decision.delta
    return float(weights @ values)


def generalized_payments(
    profile: TypeProfile,
    prior_matrix: np.ndarray,
    costs: "CostVector",
    table: ValuationTable,
    params: MechanismParams,
    *,
    samples: int | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """Per-occupant transfers for the chosen outcome; they sum to its cost.

    t_i = alpha_i * dC(x*) - psi_i(own report) + sum_j beta_ij * psi_j(report j).
    """
    params.validate(profile.n)
    return _payments_unchecked(
        profile, prior_matrix, costs, table, params, samples=samples, seed=seed
    )


def _payments_unchecked(
    profile, prior_matrix, costs, table, params, *, samples=None, seed=None
) -> np.ndarray:
    # No params validation: audits use this path to probe corrupted rules.
    n = profile.n
    chosen = select_outcome(profile, costs, table)
    delta_star = costs.delta(chosen.kind)
    psi = np.array(
        [
            expected_externality(
                i,
                profile.type_ids[i],
                prior_matrix,
                params,
                costs,
                table,
                samples=samples,
                seed=None if seed is None else seed + i,
            )
            for i in range(n)
        ]
    )
    return params.alpha * delta_star - psi + params.beta @ psi


def standard_payments(
    profile: TypeProfile,
    prior_matrix: np.ndarray,
    costs: "CostVector",
    table: ValuationTable,
    *,
    samples: int | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """Transfers at equal cost shares and uniform redistribution weights."""
    if profile.n < 2:
        raise DegenerateGroupError(
            "no externality to redistribute with a single occupant; "
            "charge the incremental cost directly"
        )
    return generalized_payments(
        profile,
        prior_matrix,
        costs,
        table,
        MechanismParams.standard(profile.n),
        samples=samples,
        seed=seed,
    )


def net_benefits(
    profile: TypeProfile,
    outcome: Outcome,
    payments: Sequence[float] | np.ndarray,
    table: ValuationTable,
) -> np.ndarray:
    """Per-occupant value of the outcome minus the transfer charged."""
    payments = np.asarray(payments, dtype=float)
    if payments.shape != (profile.n,):
        raise MechanismError("payments length must match occupant count")
    u = table.values[np.array(profile.type_ids) - 1, outcome.kind.column]
    return u - payments
