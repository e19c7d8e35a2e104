"""Synthetic-occupant experiment harness.

Drives the session engine with agents whose types are sampled per round from
per-temperature priors, audits incentive compatibility and budget balance by
enumeration, compares the mechanism policies against a fixed set-point
baseline, and sweeps the electricity price. Every run is reproducible from a
single seed; common random numbers are used across policies so two runs with
the same seed see the same underlying randomness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import energy as energy_mod
from . import fairness as fairness_mod
from . import mechanism as mech
from .energy import CostVector, EnergyModelConfig, WeatherSample
from .fairness import PriorCounts, PriorSet
from .mechanism import (
    N_TYPES,
    MechanismParams,
    OutcomeKind,
    TypeProfile,
    ValuationTable,
    enumerate_type_grid,
    joint_probabilities,
)
from .session import Phase, Session, SessionConfig, WeatherSpec, fmt_money

DEFAULT_GENERATOR_STRENGTH = 24  # pseudo-observations per (occupant, temperature)


class ScenarioError(Exception):
    pass


# --------------------------------------------------------------- prior makers

# Temperature-indexed type weights for a warm-leaning population: wants warmer
# at the cold end, settles on "current" around the comfort point, wants cooler
# at the hot end. Index = position within the session temperature range.
_WARM_WEIGHTS = np.array(
    [
        [0, 0, 0, 1, 1, 0, 4, 5, 3],
        [0, 0, 0, 3, 2, 1, 4, 3, 2],
        [1, 1, 0, 6, 3, 2, 2, 1, 0],
        [3, 2, 1, 5, 3, 2, 1, 0, 0],
        [5, 4, 3, 3, 1, 1, 0, 0, 0],
    ],
    dtype=float,
)

# Type mirror: cooler(k) <-> warmer(k), current(2) <-> current(3).
_MIRROR = [6, 7, 8, 3, 5, 4, 0, 1, 2]


def _weight_profile(kind: str, position: float) -> np.ndarray:
    idx = int(round(position * (_WARM_WEIGHTS.shape[0] - 1)))
    if kind == "skewed-warm":
        return _WARM_WEIGHTS[idx]
    if kind == "skewed-cool":
        return _WARM_WEIGHTS[_WARM_WEIGHTS.shape[0] - 1 - idx][_MIRROR]
    if kind == "symmetric":
        # mild, occupant-identical profile centered on "current"
        return np.array([1, 1, 1, 3, 2, 2, 1, 1, 1], dtype=float)
    raise ScenarioError(f"unknown prior generator {kind!r}")


def generate_prior_counts(
    kind: str,
    occupants: Sequence[str],
    temps: Sequence[int],
    *,
    seed: int,
    strength: int = DEFAULT_GENERATOR_STRENGTH,
) -> dict:
    """Integer pseudo-observation histograms per occupant per temperature.

    The symmetric generator gives every occupant identical counts; the skewed
    generators draw occupant-specific multinomial jitter around the profile.
    """
    temps = list(temps)
    rng = np.random.default_rng(seed)
    counts: dict[str, dict[str, list[float]]] = {}
    span = max(len(temps) - 1, 1)
    for occ in occupants:
        counts[occ] = {}
        for pos, t in enumerate(temps):
            w = _weight_profile(kind, pos / span)
            p = w / w.sum()
            if kind == "symmetric":
                cell = np.round(p * strength)
            else:
                cell = rng.multinomial(strength, p).astype(float)
            counts[occ][str(t)] = [float(x) for x in cell]
    return counts


# ------------------------------------------------------------- scenario spec

@dataclass
class ScenarioSpec:
    name: str
    seed: int
    rounds: int
    occupants: list[str]
    policy: dict = field(default_factory=lambda: {"kind": "generalized"})
    session: dict = field(default_factory=dict)
    priors: dict = field(default_factory=lambda: {"generator": "symmetric", "generator_seed": 0})

    def __post_init__(self):
        if self.seed is None:
            raise ScenarioError("a seed is mandatory in every scenario")
        if self.rounds < 1:
            raise ScenarioError("rounds must be >= 1")
        kind = self.policy.get("kind")
        if kind not in ("generalized", "standard", "fixed"):
            raise ScenarioError(f"unknown policy kind {kind!r}")
        if kind == "fixed" and "setpoint" not in self.policy:
            raise ScenarioError("fixed policy needs a setpoint")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        known = {"name", "seed", "rounds", "occupants", "policy", "session", "priors"}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def from_file(cls, path) -> "ScenarioSpec":
        text = open(path, "rb").read()
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text)
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "rounds": self.rounds,
            "occupants": list(self.occupants),
            "policy": dict(self.policy),
            "session": dict(self.session),
            "priors": dict(self.priors),
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def resolve_counts(self) -> dict:
        if "counts" in self.priors:
            return self.priors["counts"]
        session = dict(self.session)
        lo = int(session.get("temp_lower", 22))
        hi = int(session.get("temp_upper", 26))
        if "counts_file" in self.priors:
            with open(self.priors["counts_file"]) as fh:
                return json.load(fh)
        return generate_prior_counts(
            self.priors.get("generator", "symmetric"),
            self.occupants,
            range(lo, hi + 1),
            seed=int(self.priors.get("generator_seed", 0)),
            strength=int(self.priors.get("strength", DEFAULT_GENERATOR_STRENGTH)),
        )

    def session_config(self) -> SessionConfig:
        data = dict(self.session)
        data["occupants"] = list(self.occupants)
        data.setdefault("phase", Phase.FAIR_ALLOCATION.value)
        data["initial_prior_counts"] = self.resolve_counts()
        if self.policy.get("kind") == "standard":
            data["payment_rule"] = "standard"
        return SessionConfig.from_dict(data)


# ------------------------------------------------------------------- sampling

def sample_profile(
    prior_matrix: np.ndarray, occupants: Sequence[str], uniforms: np.ndarray
) -> TypeProfile:
    """Map per-occupant uniform draws through the priors' inverse CDFs."""
    cdf = np.cumsum(prior_matrix, axis=1)
    type_ids = [int(np.searchsorted(cdf[i], uniforms[i], side="right")) + 1
                for i in range(len(occupants))]
    type_ids = [min(t, N_TYPES) for t in type_ids]
    return TypeProfile(tuple(occupants), tuple(type_ids))


# --------------------------------------------------------------- run scenario

@dataclass
class SessionResult:
    name: str
    policy: dict
    seed: int
    config_hash: str
    generator: dict
    occupants: list[str]
    rounds: list[dict]
    aggregates: dict

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "policy": self.policy,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "generator": self.generator,
            "occupants": self.occupants,
            "rounds": self.rounds,
            "aggregates": self.aggregates,
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_jsonable(), sort_keys=True, separators=(",", ":")).encode()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_jsonable(), fh, indent=2, sort_keys=True)

    def rounds_csv(self) -> str:
        lines = ["round,t0,outcome,setpoint,sum_valuations,incremental_cost,welfare,absolute_cost"]
        for r in self.rounds:
            lines.append(
                f"{r['index']},{r['t0']},{r['outcome']},{r['setpoint']},"
                f"{r['sum_valuations']},{r['incremental_cost']},{r['welfare']},{r['absolute_cost']}"
            )
        return "\n".join(lines) + "\n"

    def occupants_csv(self) -> str:
        lines = ["occupant,mean_net_benefit,var_net_benefit"]
        per = self.aggregates["per_occupant"]
        for occ in self.occupants:
            lines.append(f"{occ},{per[occ]['mean_net_benefit']},{per[occ]['var_net_benefit']}")
        return "\n".join(lines) + "\n"


def run_scenario(spec: ScenarioSpec) -> SessionResult:
    """Simulate one session under the scenario's policy. Deterministic per seed."""
    policy_kind = spec.policy.get("kind", "generalized")
    smoothing = float(spec.session.get("smoothing", 1.0))
    truth = PriorCounts.from_jsonable(spec.resolve_counts())
    rng = np.random.default_rng(spec.seed)

    if policy_kind == "fixed":
        return _run_fixed(spec, truth, smoothing, rng)

    config = spec.session_config()
    token_counter = iter(range(10**6))
    sess = Session.create(
        config,
        session_id=f"sim-{spec.name}-{spec.seed}",
        token_factory=lambda: f"token-{next(token_counter):06d}",
        now=0.0,
    )
    records = []
    per_occ_pi = {occ: [] for occ in spec.occupants}
    for r in range(spec.rounds):
        now = r * config.round_length_s
        rnd = sess.open_round(now=now)
        pm = np.stack([truth.smoothed(occ, rnd.t0, smoothing) for occ in spec.occupants])
        uniforms = rng.random(len(spec.occupants))
        profile = sample_profile(pm, spec.occupants, uniforms)
        for occ, tid in zip(profile.occupants, profile.type_ids):
            sess.submit_report(occ, tid, now=now + 1.0)
        sess.close_round(now=now + 2.0)
        dec = rnd.decision
        payments = dec["payments"]
        u = {
            occ: mech.valuation(
                sess.table,
                mech.comfort_type(rnd.reports[occ]["type_id"]),
                mech.Outcome(OutcomeKind(dec["outcome"]["kind"]), dec["outcome"]["setpoint"]),
            )
            for occ in spec.occupants
        }
        net = {
            occ: u[occ] - (float(payments[occ]) if payments else 0.0)
            for occ in spec.occupants
        }
        for occ in spec.occupants:
            per_occ_pi[occ].append(net[occ])
        records.append(
            {
                "index": rnd.index,
                "t0": rnd.t0,
                "outcome": dec["outcome"]["kind"],
                "setpoint": dec["outcome"]["setpoint"],
                "sum_valuations": dec["welfare"]["sum_valuations"],
                "incremental_cost": dec["welfare"]["incremental_cost"],
                "welfare": dec["welfare"]["welfare"],
                "absolute_cost": fmt_money(
                    rnd.costs.absolute(OutcomeKind(dec["outcome"]["kind"]))
                ),
                "cost_deltas": {
                    e.outcome.kind.value: fmt_money(e.incremental)
                    for e in rnd.costs.entries
                },
                "reports": {occ: rnd.reports[occ]["type_id"] for occ in spec.occupants},
                "payments": payments,
                "net_benefits": {occ: fmt_money(v) for occ, v in net.items()},
                "defaulted": sorted(
                    occ for occ, rep in rnd.reports.items() if rep["source"] == "defaulted"
                ),
            }
        )
    return _finish_result(spec, records, per_occ_pi)


def _run_fixed(spec: ScenarioSpec, truth: PriorCounts, smoothing: float, rng) -> SessionResult:
    setpoint = int(spec.policy["setpoint"])
    session = dict(spec.session)
    energy_data = dict(session.get("energy", {}))
    energy_data.setdefault("base_setpoint", session.get("base_setpoint", setpoint))
    energy_cfg = EnergyModelConfig(**energy_data)
    weather = WeatherSpec.from_dict(session.get("weather", {"mode": "constant"}))
    table = ValuationTable.default()
    records = []
    per_occ_pi = {occ: [] for occ in spec.occupants}
    for r in range(spec.rounds):
        sample = weather.sample(r)
        cost = energy_mod.electricity_cost(setpoint, sample, energy_cfg)
        pm = np.stack([truth.smoothed(occ, setpoint, smoothing) for occ in spec.occupants])
        uniforms = rng.random(len(spec.occupants))
        profile = sample_profile(pm, spec.occupants, uniforms)
        u = {
            occ: table.value(tid, OutcomeKind.STAY)
            for occ, tid in zip(profile.occupants, profile.type_ids)
        }
        for occ in spec.occupants:
            per_occ_pi[occ].append(u[occ])
        records.append(
            {
                "index": r,
                "t0": setpoint,
                "outcome": OutcomeKind.STAY.value,
                "setpoint": setpoint,
                "sum_valuations": fmt_money(sum(u.values())),
                "incremental_cost": fmt_money(0.0),
                "welfare": fmt_money(sum(u.values())),
                "absolute_cost": fmt_money(cost),
                "cost_deltas": {OutcomeKind.STAY.value: fmt_money(0.0)},
                "reports": {
                    occ: tid for occ, tid in zip(profile.occupants, profile.type_ids)
                },
                "payments": None,
                "net_benefits": {occ: fmt_money(v) for occ, v in u.items()},
                "defaulted": [],
            }
        )
    return _finish_result(spec, records, per_occ_pi)


def _finish_result(spec: ScenarioSpec, records, per_occ_pi) -> SessionResult:
    comfort = [float(r["sum_valuations"]) for r in records]
    cost = [float(r["absolute_cost"]) for r in records]
    inc = [float(r["incremental_cost"]) for r in records]
    per_occupant = {
        occ: {
            "mean_net_benefit": float(np.mean(vals)),
            "var_net_benefit": float(np.var(vals)),
        }
        for occ, vals in per_occ_pi.items()
    }
    aggregates = {
        "mean_aggregate_comfort": float(np.mean(comfort)),
        "total_energy_cost": float(np.sum(cost)),
        "total_incremental_cost": float(np.sum(inc)),
        "per_occupant": per_occupant,
    }
    return SessionResult(
        name=spec.name,
        policy=dict(spec.policy),
        seed=spec.seed,
        config_hash=spec.config_hash(),
        generator=dict(spec.priors),
        occupants=list(spec.occupants),
        rounds=records,
        aggregates=aggregates,
    )


# -------------------------------------------------------------------- audits

def ic_audit(
    prior_matrix: np.ndarray,
    params: MechanismParams,
    costs: CostVector,
    table: ValuationTable,
    *,
    depth: str = "exhaustive",
    samples: int = 20_000,
    seed: int = 0,
    budget_draws: int = 200,
    validate_params: bool = True,
) -> dict:
    """Deviation and budget audit of a payment rule on one round instance.

    For every (occupant, true type, misreport) triple, compares the interim
    expected net benefit of truth vs lie, with opponents truthful and drawn
    from their priors. Exhaustive opponent enumeration needs n <= 3; larger
    groups use seeded sampling. The budget check draws random profiles and
    measures how far the payments drift from the chosen outcome's cost; it is
    the check that catches structurally corrupted parameters, which is why
    params validation is optional here.
    """
    n = prior_matrix.shape[0]
    if validate_params:
        params.validate(n)
    if depth == "exhaustive" and n > 3:
        raise ScenarioError("exhaustive deviation audit supports n <= 3")
    rng = np.random.default_rng(seed)
    alpha, beta = params.alpha, params.beta

    psi_table = np.zeros((n, N_TYPES))
    for i in range(n):
        for k in range(N_TYPES):
            psi_table[i, k] = mech.expected_externality(
                i, k + 1, prior_matrix, params, costs, table,
                **({} if n <= mech.EXHAUSTIVE_MAX_OCCUPANTS
                   else {"samples": samples, "seed": seed + 31 * i + k}),
            )
    e_psi = (psi_table * prior_matrix).sum(axis=1)

    worst = {"violation": -np.inf}
    max_violation = -np.inf
    worst_se = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        if depth == "exhaustive":
            opp_grid = enumerate_type_grid(n - 1)
            weights = joint_probabilities(opp_grid, prior_matrix[others])
        else:
            opp_grid = np.stack(
                [rng.choice(N_TYPES, size=samples, p=prior_matrix[j]) for j in others],
                axis=1,
            ).astype(np.int8)
            weights = np.full(opp_grid.shape[0], 1.0 / opp_grid.shape[0])
        const_i = -float(beta[i, others] @ e_psi[others])
        eu = np.zeros((N_TYPES, N_TYPES))  # [true k, report r]
        per_report_cols = []
        per_report_delta = []
        full = np.empty((opp_grid.shape[0], n), dtype=np.int8)
        full[:, others] = opp_grid
        for r in range(N_TYPES):
            full[:, i] = r
            dec = mech.decide_many(full, costs, table)
            cols = np.array([o.kind.column for o in dec.order])[dec.choice]
            per_report_cols.append(cols)
            per_report_delta.append(dec.delta)
            col_mass = np.bincount(cols, weights=weights, minlength=3)
            e_u_true = table.values @ col_mass  # (9,) per true type
            e_d = float(weights @ dec.delta)
            eu[:, r] = e_u_true - alpha[i] * e_d + psi_table[i, r] + const_i
        for k in range(N_TYPES):
            gaps = eu[k, :] - eu[k, k]
            gaps[k] = -np.inf
            r = int(np.argmax(gaps))
            if gaps[r] > max_violation:
                max_violation = float(gaps[r])
                worst = {
                    "occupant_index": i,
                    "true_type": k + 1,
                    "misreport": r + 1,
                    "violation": float(gaps[r]),
                }
                if depth != "exhaustive":
                    # common random numbers: the gap is a sample mean of
                    # per-opponent-draw payoff differences, so its standard
                    # error comes straight from that sample
                    diff = (
                        table.values[k, per_report_cols[r]]
                        - alpha[i] * per_report_delta[r]
                    ) - (
                        table.values[k, per_report_cols[k]]
                        - alpha[i] * per_report_delta[k]
                    )
                    worst_se = float(diff.std(ddof=1) / np.sqrt(len(diff)))

    budget_gap = 0.0
    occupants = [f"occ{i}" for i in range(n)]
    for d in range(budget_draws):
        draw_rng = np.random.default_rng(seed + 1000 + d)
        type_ids = tuple(
            int(draw_rng.choice(N_TYPES, p=prior_matrix[i])) + 1 for i in range(n)
        )
        profile = TypeProfile(tuple(occupants), type_ids)
        pays = mech._payments_unchecked(profile, prior_matrix, costs, table, params)
        chosen = mech.select_outcome(profile, costs, table)
        budget_gap = max(budget_gap, abs(float(pays.sum()) - costs.delta(chosen.kind)))

    ic_tolerance = 1e-9 if depth == "exhaustive" else 3.0 * worst_se + 1e-9
    return {
        "n": n,
        "depth": depth,
        "max_ic_violation": float(max_violation),
        "violation_se": float(worst_se),
        "worst_case": worst,
        "max_budget_gap": float(budget_gap),
        "budget_draws": budget_draws,
        "passed": bool(max_violation <= ic_tolerance and budget_gap <= 1e-9),
    }


# ------------------------------------------------------- baseline comparison

def compare_policies(policy_spec: ScenarioSpec, fixed_spec: ScenarioSpec) -> dict:
    """Run a mechanism-policy scenario and its fixed-set-point twin, then compare."""
    return baseline_compare(run_scenario(policy_spec), run_scenario(fixed_spec))


def baseline_compare(policy_result: SessionResult, fixed_result: SessionResult) -> dict:
    """Total AC cost and aggregate comfort, mechanism policy vs fixed set-point."""
    if len(policy_result.rounds) != len(fixed_result.rounds):
        raise ScenarioError("results must cover the same number of rounds")
    if policy_result.seed != fixed_result.seed:
        raise ScenarioError("results must share a seed for a like-for-like comparison")
    policy_cost = policy_result.aggregates["total_energy_cost"]
    fixed_cost = fixed_result.aggregates["total_energy_cost"]
    saving = 0.0 if fixed_cost == 0 else (fixed_cost - policy_cost) / fixed_cost * 100.0
    return {
        "policy": policy_result.policy,
        "policy_total_cost": policy_cost,
        "fixed_total_cost": fixed_cost,
        "saving_pct": saving,
        "policy_mean_comfort": policy_result.aggregates["mean_aggregate_comfort"],
        "fixed_mean_comfort": fixed_result.aggregates["mean_aggregate_comfort"],
    }


# ----------------------------------------------------------------- price sweep

def price_sweep(
    priors: PriorSet,
    occupants: Sequence[str],
    t0: int,
    weather: WeatherSample,
    energy_config: EnergyModelConfig,
    table: ValuationTable,
    prices: Sequence[float],
    *,
    feasible: Sequence[OutcomeKind] = (OutcomeKind.COOLER, OutcomeKind.STAY, OutcomeKind.WARMER),
) -> list[dict]:
    """Optimized common expected benefit (and standard-rule contrast) per price."""
    if list(prices) != sorted(prices):
        raise ScenarioError("price grid must be sorted ascending")
    rows = []
    n = len(occupants)
    standard = MechanismParams.standard(n)
    for rho in prices:
        cfg = EnergyModelConfig(
            ua=energy_config.ua,
            internal_gains=energy_config.internal_gains,
            cop=energy_config.cop,
            price=rho,
            interval=energy_config.interval,
            base_setpoint=energy_config.base_setpoint,
        )
        costs = energy_mod.outcome_costs(t0, list(feasible), weather, cfg)
        cache = fairness_mod.build_moment_cache(priors, occupants, t0, costs, table)
        solution = fairness_mod.optimize_fairness(cache)
        std_benefits = fairness_mod.exante_net_benefits(cache, standard)
        rows.append(
            {
                "price": float(rho),
                "solver_status": solution.solver_status.value,
                "common_benefit": float(np.mean(solution.exante_benefits)),
                "generalized_spread": float(
                    solution.exante_benefits.max() - solution.exante_benefits.min()
                ),
                "standard_benefits": [float(v) for v in std_benefits],
                "standard_spread": float(std_benefits.max() - std_benefits.min()),
                "sum_variance": float(solution.sum_variance),
                "baseline_sum_variance": float(solution.baseline_sum_variance),
            }
        )
    return rows
