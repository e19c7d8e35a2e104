"""Operator command line: simulate, sweep prices, solve fairness, audit, serve, replay, export.

Every run writes a manifest (config hash, seed, version) next to its outputs.
Exit codes: 0 ok, 1 configuration problem, 2 audit failure, 3 solver infeasible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import energy as energy_mod
from . import fairness as fairness_mod
from . import sim as sim_mod
from .energy import EnergyModelConfig, WeatherSample
from .mechanism import MechanismParams, OutcomeKind, ValuationTable
from .session import Session, SessionConfig, WeatherSpec, read_event_log

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_AUDIT = 2
EXIT_INFEASIBLE = 3


def _fail(message: str, code: int = EXIT_CONFIG) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _write_manifest(out_dir: Path, command: str, payload: dict) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "created_at": time.time(),
        **payload,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def cmd_simulate(args) -> int:
    scenario_path = Path(args.scenario)
    if not scenario_path.exists():
        return _fail(f"scenario file not found: {scenario_path}")
    try:
        spec = sim_mod.ScenarioSpec.from_file(scenario_path)
    except (sim_mod.ScenarioError, json.JSONDecodeError, KeyError, TypeError) as exc:
        return _fail(f"bad scenario {scenario_path}: {exc}")
    seed_override = args.seed is not None
    if seed_override:
        spec.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = sim_mod.run_scenario(spec)
    result.save(out_dir / "result.json")
    (out_dir / "rounds.csv").write_text(result.rounds_csv())
    (out_dir / "occupants.csv").write_text(result.occupants_csv())
    _write_manifest(
        out_dir,
        "simulate",
        {
            "scenario": str(scenario_path),
            "config_hash": spec.config_hash(),
            "seed": spec.seed,
            "seed_overridden": seed_override,
        },
    )
    print(f"wrote {out_dir}/result.json ({len(result.rounds)} rounds)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    path = Path(args.config)
    if not path.exists():
        return _fail(f"sweep config not found: {path}")
    data = json.loads(path.read_text())
    try:
        priors = fairness_mod.PriorSet.load(data["priors_file"]) if "priors_file" in data \
            else fairness_mod.PriorSet({o: {int(t): v for t, v in temps.items()}
                                        for o, temps in data["priors"].items()})
        occupants = data["occupants"]
        t0 = int(data["t0"])
        prices = [float(p) for p in data["prices"]]
        energy_cfg = EnergyModelConfig(**data.get("energy", {}))
        weather = WeatherSample("sweep", float(data.get("outdoor_c", 32.0)))
        table = ValuationTable.default()
    except (KeyError, ValueError, fairness_mod.FairnessError) as exc:
        return _fail(f"bad sweep config {path}: {exc}")
    rows = sim_mod.price_sweep(priors, occupants, t0, weather, energy_cfg, table, prices)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    lines = ["price,common_benefit"] + [f"{r['price']},{r['common_benefit']}" for r in rows]
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out_dir, "sweep", {"config": str(path), "config_hash": _hash_file(path)})
    infeasible = [r["price"] for r in rows if r["solver_status"] == "Infeasible"]
    if infeasible:
        print(f"infeasible at prices: {infeasible}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"wrote {out_dir}/sweep.json ({len(rows)} prices)")
    return EXIT_OK


def cmd_fairness(args) -> int:
    priors_path = Path(args.priors)
    config_path = Path(args.config)
    for p in (priors_path, config_path):
        if not p.exists():
            return _fail(f"file not found: {p}")
    try:
        priors = fairness_mod.PriorSet.load(priors_path)
        cfg = json.loads(config_path.read_text())
        occupants = cfg.get("occupants") or priors.occupants()
        t0 = int(cfg["t0"])
        if "deltas" in cfg:
            deltas = {OutcomeKind(k): float(v) for k, v in cfg["deltas"].items()}
            costs = energy_mod.costs_from_deltas(t0, deltas)
        else:
            energy_cfg = EnergyModelConfig(**cfg.get("energy", {}))
            weather = WeatherSample("fairness", float(cfg.get("outdoor_c", 32.0)))
            kinds = [OutcomeKind.COOLER, OutcomeKind.STAY, OutcomeKind.WARMER]
            costs = energy_mod.outcome_costs(t0, kinds, weather, energy_cfg)
    except (KeyError, ValueError, fairness_mod.FairnessError) as exc:
        return _fail(f"bad fairness inputs: {exc}")
    table = ValuationTable.default()
    cache = fairness_mod.build_moment_cache(priors, occupants, t0, costs, table)
    solution = fairness_mod.optimize_fairness(cache)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(solution.to_jsonable(), indent=2, sort_keys=True))
    print(
        f"status={solution.solver_status.value} residual={solution.equality_residual:.2e} "
        f"variance={solution.sum_variance:.6g} baseline={solution.baseline_sum_variance:.6g}"
    )
    if solution.solver_status is fairness_mod.SolverStatus.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_audit(args) -> int:
    scenario_path = Path(args.scenario)
    if not scenario_path.exists():
        return _fail(f"scenario file not found: {scenario_path}")
    try:
        spec = sim_mod.ScenarioSpec.from_file(scenario_path)
    except (sim_mod.ScenarioError, json.JSONDecodeError, KeyError, TypeError) as exc:
        return _fail(f"bad scenario {scenario_path}: {exc}")
    counts = fairness_mod.PriorCounts.from_jsonable(spec.resolve_counts())
    smoothing = float(spec.session.get("smoothing", 1.0))
    t0 = int(spec.session.get("initial_temp", spec.session.get("temp_lower", 22)))
    prior_matrix = np.stack([counts.smoothed(o, t0, smoothing) for o in spec.occupants])
    n = len(spec.occupants)

    session_cfg = dict(spec.session)
    energy_cfg = EnergyModelConfig(**{
        **session_cfg.get("energy", {}),
        "base_setpoint": session_cfg.get("base_setpoint", 22),
    })
    weather_spec = WeatherSpec.from_dict(session_cfg.get("weather", {"mode": "constant"}))
    lo = int(session_cfg.get("temp_lower", 22))
    hi = int(session_cfg.get("temp_upper", 26))
    kinds = []
    if t0 - 1 >= lo:
        kinds.append(OutcomeKind.COOLER)
    kinds.append(OutcomeKind.STAY)
    if t0 + 1 <= hi:
        kinds.append(OutcomeKind.WARMER)
    costs = energy_mod.outcome_costs(t0, kinds, weather_spec.sample(0), energy_cfg)

    if args.params:
        params_data = json.loads(Path(args.params).read_text())
        params = MechanismParams(np.array(params_data["alpha"]), np.array(params_data["beta"]))
        validate = False
    else:
        params = MechanismParams.standard(n)
        validate = True
    depth = args.depth or ("exhaustive" if n <= 3 else "sampled")
    report = sim_mod.ic_audit(
        prior_matrix,
        params,
        costs,
        ValuationTable.default(),
        depth=depth,
        samples=args.samples,
        seed=spec.seed,
        validate_params=validate,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True))
    print(
        f"ic_violation={report['max_ic_violation']:.3e} "
        f"budget_gap={report['max_budget_gap']:.3e} passed={report['passed']}"
    )
    return EXIT_OK if report["passed"] else EXIT_AUDIT


def cmd_serve(args) -> int:
    import uvicorn

    from .service import SessionRegistry, create_app

    if not 0 < args.port < 65536:
        return _fail(f"invalid port {args.port}")
    if args.ui_dir and not Path(args.ui_dir).is_dir():
        return _fail(f"ui directory not found: {args.ui_dir}")
    registry = SessionRegistry(data_dir=args.data_dir)
    app = create_app(registry, ui_dir=args.ui_dir)
    if args.config:
        config_path = Path(args.config)
        if not config_path.exists():
            return _fail(f"config file not found: {config_path}")
        try:
            config = SessionConfig.from_file(config_path)
        except Exception as exc:
            return _fail(f"bad session config: {exc}")
        handle = registry.create(config)
        session = handle.session
        print(f"session {session.session_id}")
        print(f"admin token: {session.admin_token}")
        for occ, tok in session.occupant_tokens.items():
            print(f"  {occ}: {tok}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_replay(args) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        return _fail(f"event log not found: {log_path}")
    try:
        events = read_event_log(log_path)
        session = Session.replay(events)
    except Exception as exc:
        return _fail(f"replay failed: {exc}")
    snapshot = session.serialize_state()
    again = Session.replay(events).serialize_state()
    if snapshot != again:
        return _fail("replay is not deterministic", EXIT_AUDIT)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(snapshot)
    print(f"replayed {len(events)} events; t0={session.t0} phase={session.phase.value}")
    return EXIT_OK


def cmd_export(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    comfort_rows = []
    price_rows = []
    policy_rows = []
    for path_str in args.results:
        path = Path(path_str)
        if not path.exists():
            return _fail(f"result file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            return _fail(f"malformed result {path}: {exc}")
        if isinstance(data, list) and all("price" in row for row in data):
            for row in data:
                price_rows.append((row["price"], row["common_benefit"]))
        elif isinstance(data, dict) and "rounds" in data:
            for r in data["rounds"]:
                comfort_rows.append(
                    (data["name"], r["index"], r["sum_valuations"], r["absolute_cost"])
                )
            policy_rows.append(
                (data["name"], data["policy"]["kind"], data["aggregates"]["total_energy_cost"])
            )
        else:
            return _fail(f"unrecognized result shape in {path}")
    lines = ["scenario,round,aggregate_comfort,energy_cost"]
    lines += [f"{n},{i},{c},{e}" for n, i, c, e in comfort_rows]
    (out_dir / "comfort_vs_cost.csv").write_text("\n".join(lines) + "\n")
    lines = ["price,common_benefit"]
    lines += [f"{p},{b}" for p, b in price_rows]
    (out_dir / "price_benefit.csv").write_text("\n".join(lines) + "\n")
    lines = ["scenario,policy,total_cost"]
    lines += [f"{n},{p},{c}" for n, p, c in policy_rows]
    (out_dir / "policy_costs.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote 3 CSVs to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoshare",
        description="Shared-space AC set-point engine: simulate, audit, serve.",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write result files")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="electricity price sweep of the optimized benefit")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("fairness", help="solve the two-stage fairness program")
    p.add_argument("--priors", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fairness)

    p = sub.add_parser("audit", help="deviation + budget audit of a payment rule")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", default=None, help="FairnessSolution JSON to audit")
    p.add_argument("--depth", choices=["exhaustive", "sampled"], default=None)
    p.add_argument("--samples", type=int, default=20000)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", default=None, help="session config to create at startup")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--ui-dir", default=None, help="built web client to mount at /ui")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("replay", help="rebuild session state from an event log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("export", help="figure-ready CSVs from result files")
    p.add_argument("--results", nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv"], default="csv")
    p.set_defaults(fn=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
