"""Per-round energy costs for candidate set-points.

Two cost sources stand behind the same CostVector interface: a single-zone
steady-state conductance model with a constant COP (good enough desk-scale,
cooling only), and an ingested CSV of externally simulated per-setpoint costs.
Occupants are only ever charged the difference against the base set-point,
which the building pays for outright.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .mechanism import Outcome, OutcomeKind


class EnergyError(Exception):
    pass


class IncompleteTableError(EnergyError):
    """A cost table lacks a row the session will need."""


class TableParseError(EnergyError):
    pass


@dataclass(frozen=True)
class EnergyModelConfig:
    """Steady-state cooling model: load = max(0, ua*(T_out - T_set) + gains)."""

    ua: float = 50.0               # thermal conductance, W/K
    internal_gains: float = 400.0  # lighting + equipment, W
    cop: float = 3.0
    price: float = 0.25            # $/kWh
    interval: float = 0.5          # hours per round
    base_setpoint: int = 22       # °C, cost reference the building covers

    def __post_init__(self):
        if self.ua < 0 or self.internal_gains < 0:
            raise EnergyError("ua and internal_gains must be nonnegative")
        if self.cop <= 0:
            raise EnergyError("cop must be positive")
        if self.price < 0 or self.interval <= 0:
            raise EnergyError("price must be nonnegative and interval positive")


@dataclass(frozen=True)
class WeatherSample:
    timestamp: str
    outdoor_temp: float

    def __post_init__(self):
        if not -20.0 <= self.outdoor_temp <= 60.0:
            raise EnergyError(f"outdoor temperature {self.outdoor_temp} out of range")


@dataclass(frozen=True)
class OutcomeCost:
    outcome: Outcome
    absolute: float     # C(x), $
    incremental: float  # dC(x) = C(x) - C(base), $


@dataclass(frozen=True)
class CostVector:
    """Costs of the feasible outcomes this round, relative to the base set-point."""

    entries: tuple[OutcomeCost, ...]
    base_cost: float
    provenance: str = "model"
    _by_kind: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise EnergyError("feasible outcome set must be nonempty")
        object.__setattr__(self, "_by_kind", {e.outcome.kind: e for e in self.entries})

    def feasible_outcomes(self) -> list[Outcome]:
        return [e.outcome for e in self.entries]

    def is_feasible(self, kind: OutcomeKind) -> bool:
        return kind in self._by_kind

    def _entry(self, kind: OutcomeKind) -> OutcomeCost:
        try:
            return self._by_kind[kind]
        except KeyError:
            raise EnergyError(f"outcome {kind.value} is not feasible this round") from None

    def delta(self, kind: OutcomeKind) -> float:
        return self._entry(kind).incremental

    def absolute(self, kind: OutcomeKind) -> float:
        return self._entry(kind).absolute


def cooling_load(setpoint: float, weather: WeatherSample, config: EnergyModelConfig) -> float:
    """Thermal kWh removed over one interval; clamped at zero (cooling only)."""
    watts = config.ua * (weather.outdoor_temp - setpoint) + config.internal_gains
    return max(0.0, watts) * config.interval / 1000.0


def electricity_cost(setpoint: float, weather: WeatherSample, config: EnergyModelConfig) -> float:
    """Dollar cost of holding a set-point for one interval."""
    return cooling_load(setpoint, weather, config) / config.cop * config.price


def outcome_costs(
    t0: int,
    feasible: list[OutcomeKind],
    weather: WeatherSample,
    config: EnergyModelConfig,
) -> CostVector:
    """Price each feasible set-point change at t0 against the base set-point."""
    if not feasible:
        raise EnergyError("feasible outcome set must be nonempty")
    base = electricity_cost(config.base_setpoint, weather, config)
    entries = []
    for kind in feasible:
        outcome = Outcome.from_t0(kind, t0)
        absolute = electricity_cost(outcome.setpoint, weather, config)
        entries.append(OutcomeCost(outcome, absolute, absolute - base))
    return CostVector(tuple(entries), base, provenance="model")


def costs_from_deltas(
    t0: int,
    deltas: dict[OutcomeKind, float],
    base_cost: float = 0.0,
    provenance: str = "model",
) -> CostVector:
    """Build a CostVector from hand-set incremental costs (tests, fixtures)."""
    entries = tuple(
        OutcomeCost(Outcome.from_t0(kind, t0), base_cost + d, d)
        for kind, d in deltas.items()
    )
    return CostVector(entries, base_cost, provenance)


COST_TABLE_HEADER = ["round", "setpoint_c", "cost_usd"]


def load_cost_table(path, lower: int, upper: int) -> dict[int, dict[int, float]]:
    """Read a per-round cost CSV covering every set-point in [lower, upper].

    Header: round,setpoint_c,cost_usd. Raises IncompleteTableError naming the
    round and set-point on gaps, TableParseError with the line number on bad
    numbers.
    """
    rounds: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COST_TABLE_HEADER:
            raise TableParseError(
                f"cost table must start with header {','.join(COST_TABLE_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                rnd = int(row[0])
                setpoint = int(row[1])
                cost = float(row[2])
            except (ValueError, IndexError) as exc:
                raise TableParseError(f"line {lineno}: {exc}") from exc
            rounds.setdefault(rnd, {})[setpoint] = cost
    for rnd, by_setpoint in sorted(rounds.items()):
        for sp in range(lower, upper + 1):
            if sp not in by_setpoint:
                raise IncompleteTableError(
                    f"round {rnd} is missing a cost for setpoint {sp}"
                )
    return rounds


def costs_from_table(
    table: dict[int, dict[int, float]],
    round_index: int,
    t0: int,
    feasible: list[OutcomeKind],
    base_setpoint: int,
) -> CostVector:
    """CostVector for one round of an ingested cost table."""
    if round_index not in table:
        raise IncompleteTableError(f"cost table has no rows for round {round_index}")
    by_setpoint = table[round_index]
    if base_setpoint not in by_setpoint:
        raise IncompleteTableError(
            f"round {round_index} is missing a cost for setpoint {base_setpoint}"
        )
    base = by_setpoint[base_setpoint]
    entries = []
    for kind in feasible:
        outcome = Outcome.from_t0(kind, t0)
        if outcome.setpoint not in by_setpoint:
            raise IncompleteTableError(
                f"round {round_index} is missing a cost for setpoint {outcome.setpoint}"
            )
        absolute = by_setpoint[outcome.setpoint]
        entries.append(OutcomeCost(outcome, absolute, absolute - base))
    return CostVector(tuple(entries), base, provenance="table")


WEATHER_HEADER = ["timestamp", "outdoor_c"]


def load_weather_csv(path) -> list[WeatherSample]:
    """Read a weather trace CSV with header timestamp,outdoor_c."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != WEATHER_HEADER:
            raise TableParseError(
                f"weather CSV must start with header {','.join(WEATHER_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                samples.append(WeatherSample(row[0], float(row[1])))
            except (ValueError, IndexError) as exc:
                raise TableParseError(f"line {lineno}: {exc}") from exc
    return samples
