import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermoshare import fairness as F
from thermoshare import mechanism as mech
from thermoshare.fairness import (
    MissingPriorError,
    PriorCounts,
    PriorSet,
    SolverStatus,
    StateSpaceError,
    build_moment_cache,
    exante_net_benefits,
    expost_variance_sum,
    optimize_fairness,
    prior_update,
)
from thermoshare.mechanism import MechanismParams, TypeProfile

from conftest import make_costs, random_prior_matrix
import oracles


def priors_from_matrix(pm, t0=24):
    return PriorSet({f"o{i}": {t0: pm[i]} for i in range(pm.shape[0])})


def occupant_names(n):
    return [f"o{i}" for i in range(n)]


# ---------------------------------------------------------------- prior update

def test_prior_update_two_observations():
    counts = np.zeros(9)
    counts[3] = 2  # two sightings of type 4
    p = prior_update(counts, smoothing=1.0)
    assert p[3] == pytest.approx(3 / 11)
    for k in range(9):
        if k != 3:
            assert p[k] == pytest.approx(1 / 11)


def test_prior_update_cold_start_uniform():
    p = prior_update(np.zeros(9), smoothing=1.0)
    assert p == pytest.approx(np.full(9, 1 / 9))


def test_prior_update_heavy_evidence():
    counts = np.zeros(9)
    counts[6] = 100
    p = prior_update(counts, smoothing=1.0)
    assert p[6] == pytest.approx(101 / 109)


@given(st.integers(1, 9), st.floats(0.1, 5.0, allow_nan=False))
@settings(max_examples=40, deadline=None)
def test_prior_update_always_proper(observed, smoothing):
    p = prior_update(np.zeros(9), observed=observed, smoothing=smoothing)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p > 0)
    assert p.argmax() == observed - 1


def test_prior_update_rejects_bad_smoothing():
    with pytest.raises(F.FairnessError):
        prior_update(np.zeros(9), smoothing=0.0)


def test_prior_counts_observe_and_smooth():
    counts = PriorCounts()
    counts.observe("a", 24, 7)
    counts.observe("a", 24, 7)
    p = counts.smoothed("a", 24)
    assert p[6] == pytest.approx(3 / 11)
    round_trip = PriorCounts.from_jsonable(counts.to_jsonable())
    assert round_trip.smoothed("a", 24) == pytest.approx(p)


# -------------------------------------------------------------------- PriorSet

def test_prior_set_json_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    pm = random_prior_matrix(3, rng)
    priors = priors_from_matrix(pm)
    path = tmp_path / "priors.json"
    priors.save(path)
    loaded = PriorSet.load(path)
    assert loaded.matrix(occupant_names(3), 24) == pytest.approx(pm)


def test_prior_set_missing_prior_error():
    priors = priors_from_matrix(np.ones((2, 9)) / 9, t0=24)
    with pytest.raises(MissingPriorError, match="26"):
        priors.matrix(occupant_names(2), 26)
    with pytest.raises(MissingPriorError, match="ghost"):
        priors.vector("ghost", 24)


def test_prior_set_rejects_improper_vector():
    with pytest.raises(F.FairnessError, match="sum to 1"):
        PriorSet({"a": {24: [0.5] * 9}})
    with pytest.raises(F.FairnessError, match="negative"):
        PriorSet({"a": {24: [1.8] + [-0.1] * 8}})


# ---------------------------------------------------------------- moment cache

def test_cache_point_mass_degenerate(table):
    pm = np.zeros((2, 9))
    pm[0, 1] = 1.0
    pm[1, 8] = 1.0
    costs = make_costs(0.06, 0.0, -0.04)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(2), 24, costs, table)
    assert np.allclose(np.diag(cache.cov), 0.0, atol=1e-15)
    params = MechanismParams.standard(2)
    assert expost_variance_sum(cache, params) == pytest.approx(0.0, abs=1e-15)
    # expectations equal realized values on the single possible profile
    profile = TypeProfile.from_pairs([("o0", 2), ("o1", 9)])
    pays = mech.standard_payments(profile, pm, costs, table)
    chosen = mech.select_outcome(profile, costs, table)
    pi = mech.net_benefits(profile, chosen, pays, table)
    assert exante_net_benefits(cache, params) == pytest.approx(pi, abs=1e-12)


def test_cache_psi_matches_naive_enumeration(table):
    costs = make_costs(0.05, 0.0, -0.03)
    pm = np.ones((2, 9)) / 9
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(2), 24, costs, table)
    deltas = {"cooler": 0.05, "stay": 0.0, "warmer": -0.03}
    # the value part of the externality table: alpha plays no role there
    for k in [1, 5, 9]:
        want = oracles.naive_externality(0, k, pm, [0.0, 0.0], deltas, table.values)
        assert cache.psi_value[0, k - 1] == pytest.approx(want, abs=1e-12)


def test_cache_moment_invariants(table):
    rng = np.random.default_rng(8)
    pm = random_prior_matrix(4, rng)
    costs = make_costs(0.07, 0.0, -0.05)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(4), 24, costs, table)
    assert np.allclose(cache.cov, cache.cov.T)
    assert np.all(np.diag(cache.cov) >= 0)  # E[Z^2] >= E[Z]^2 per coordinate
    evs = np.linalg.eigvalsh(cache.cov)
    assert evs.min() > -1e-10


def test_cache_monte_carlo_agrees_with_exhaustive(table):
    rng = np.random.default_rng(17)
    pm = random_prior_matrix(3, rng)
    costs = make_costs(0.05, 0.0, -0.03)
    priors = priors_from_matrix(pm)
    n_samples = 100_000
    exact = build_moment_cache(priors, occupant_names(3), 24, costs, table)
    approx = build_moment_cache(
        priors, occupant_names(3), 24, costs, table, mode="monte-carlo",
        samples=n_samples, seed=5,
    )
    # two independent noise sources: the joint-sample mean and the estimated
    # externality tables feeding the A/B coordinates; both are bounded by the
    # largest per-draw standard deviation over sqrt(N)
    per_coord_se = np.sqrt(np.maximum(np.diag(exact.cov), 0.0)) / np.sqrt(n_samples)
    table_se = np.sqrt(np.max(np.diag(exact.cov))) / np.sqrt(n_samples)
    assert np.all(np.abs(approx.mean - exact.mean) <= 3.0 * (per_coord_se + table_se))
    assert "monte-carlo" in approx.provenance


def test_cache_monte_carlo_reproducible(table):
    pm = np.ones((3, 9)) / 9
    costs = make_costs()
    priors = priors_from_matrix(pm)
    a = build_moment_cache(priors, occupant_names(3), 24, costs, table,
                           mode="monte-carlo", samples=5_000, seed=77)
    b = build_moment_cache(priors, occupant_names(3), 24, costs, table,
                           mode="monte-carlo", samples=5_000, seed=77)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.cov, b.cov)


def test_cache_exhaustive_state_space_guard(table, costs):
    pm = np.ones((7, 9)) / 9
    with pytest.raises(StateSpaceError):
        build_moment_cache(priors_from_matrix(pm), occupant_names(7), 24, costs, table)


def test_cache_requires_two_occupants(table, costs):
    with pytest.raises(F.FairnessError):
        build_moment_cache(priors_from_matrix(np.ones((1, 9)) / 9), ["o0"], 24, costs, table)


# ------------------------------------------------------- expectation / variance

def test_exante_symmetric_occupants_equal(table):
    pm = np.tile(np.full(9, 1 / 9), (4, 1))
    costs = make_costs(0.03, 0.0, -0.02)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(4), 24, costs, table)
    e = exante_net_benefits(cache, MechanismParams.standard(4))
    assert e.max() - e.min() < 1e-12


def test_exante_and_variance_match_simulation(table):
    rng = np.random.default_rng(11)
    pm = random_prior_matrix(3, rng)
    costs = make_costs(0.05, 0.0, -0.03)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(3), 24, costs, table)
    params = MechanismParams.standard(3)

    psi_tbl = np.zeros((3, 9))
    for i in range(3):
        for k in range(9):
            psi_tbl[i, k] = mech.expected_externality(i, k + 1, pm, params, costs, table)
    nsim = 1_000_000
    sim_rng = np.random.default_rng(42)
    draws = np.stack(
        [sim_rng.choice(9, size=nsim, p=pm[i]) for i in range(3)], axis=1
    ).astype(np.int8)
    dec = mech.decide_many(draws, costs, table)
    psis = np.stack([psi_tbl[i][draws[:, i]] for i in range(3)], axis=1)
    pays = params.alpha[None, :] * dec.delta[:, None] - psis + psis @ params.beta.T
    pis = dec.utilities - pays

    e_mc = pis.mean(axis=0)
    se = pis.std(axis=0) / np.sqrt(nsim)
    e_an = exante_net_benefits(cache, params)
    assert np.all(np.abs(e_an - e_mc) <= 3 * se)

    var_mc = pis.var(axis=0).sum()
    var_an = expost_variance_sum(cache, params)
    assert var_an == pytest.approx(var_mc, rel=0.01)


def test_variance_nonnegative_for_random_params(table):
    rng = np.random.default_rng(3)
    pm = random_prior_matrix(3, rng)
    costs = make_costs(0.02, 0.0, -0.04)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(3), 24, costs, table)
    from test_mechanism import random_valid_params

    for _ in range(25):
        params = random_valid_params(3, rng)
        assert expost_variance_sum(cache, params) >= -1e-12


def test_exante_dimension_mismatch(table, costs):
    pm = np.ones((3, 9)) / 9
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(3), 24, costs, table)
    with pytest.raises(mech.ParamsError):
        exante_net_benefits(cache, MechanismParams.standard(4))


# ------------------------------------------------------------------- optimizer

def test_optimize_symmetric_returns_standard(table):
    pm = np.tile(np.full(9, 1 / 9), (3, 1))
    costs = make_costs(0.05, 0.0, -0.03)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(3), 24, costs, table)
    sol = optimize_fairness(cache)
    assert sol.solver_status is not SolverStatus.INFEASIBLE
    assert sol.params.alpha == pytest.approx(np.full(3, 1 / 3), abs=1e-6)
    assert sol.sum_variance == pytest.approx(sol.baseline_sum_variance, abs=1e-9)
    assert sol.equality_residual <= 1e-9


def test_optimize_n2_asymmetric_matches_grid_oracle(table, fixtures_dir):
    priors = PriorSet.load(fixtures_dir / "priors_n2_asym.json")
    cfg = json.loads((fixtures_dir / "fairness_n2_config.json").read_text())
    costs = make_costs(cfg["deltas"]["cooler"], cfg["deltas"]["stay"], cfg["deltas"]["warmer"])
    cache = build_moment_cache(priors, ["a", "b"], 24, costs, table)

    std_spread = float(np.ptp(exante_net_benefits(cache, MechanismParams.standard(2))))
    assert std_spread >= 1e-3

    sol = optimize_fairness(cache)
    assert sol.solver_status is not SolverStatus.INFEASIBLE
    assert sol.equality_residual <= 1e-6

    # dense grid over the one free coordinate (beta is forced for n = 2)
    beta = np.array([[0.0, 1.0], [1.0, 0.0]])
    grid = np.linspace(0.0, 1.0, 1001)
    resid = np.empty_like(grid)
    var = np.empty_like(grid)
    for idx, a1 in enumerate(grid):
        alpha = np.array([a1, 1.0 - a1])
        e = F._exante(cache, alpha, beta)
        resid[idx] = abs(e[0] - e[1])
        var[idx] = F._variance_sum(cache, alpha, beta)
    feasible = resid <= resid.min() + 1e-9
    oracle_var = var[feasible].min()
    assert sol.sum_variance == pytest.approx(oracle_var, abs=1e-4)


def test_optimize_detects_infeasible(table, fixtures_dir):
    priors = PriorSet.load(fixtures_dir / "priors_n2_infeasible.json")
    costs = make_costs(0.0, 0.0, 0.0)
    cache = build_moment_cache(priors, ["a", "b"], 24, costs, table)
    sol = optimize_fairness(cache)
    assert sol.solver_status is SolverStatus.INFEASIBLE
    assert sol.equality_residual > 1e-6


def test_optimize_feasibility_postconditions(table):
    rng = np.random.default_rng(23)
    for trial in range(6):
        pm = random_prior_matrix(4, rng, concentration=3.0)
        costs = make_costs(0.08, 0.0, -0.06)
        cache = build_moment_cache(priors_from_matrix(pm), occupant_names(4), 24, costs, table)
        sol = optimize_fairness(cache)
        if sol.solver_status is SolverStatus.INFEASIBLE:
            continue
        sol.params.validate(4)
        assert sol.equality_residual <= 1e-6
        # reported numbers reproduce from the cache
        e = exante_net_benefits(cache, sol.params)
        assert e == pytest.approx(sol.exante_benefits, abs=1e-12)
        assert expost_variance_sum(cache, sol.params) == pytest.approx(
            sol.sum_variance, abs=1e-12
        )


def test_optimize_local_optimality_certificate(table):
    rng = np.random.default_rng(31)
    pm = random_prior_matrix(3, rng, concentration=3.0)
    costs = make_costs(0.08, 0.0, -0.06)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(3), 24, costs, table)
    sol = optimize_fairness(cache)
    if sol.solver_status is SolverStatus.INFEASIBLE:
        pytest.skip("equalities unreachable on this draw")
    n = 3
    base_var = sol.sum_variance
    # random directions inside the feasible manifold: perturb beta within the
    # null space of the column-sum + equal-benefit rows, alpha fixed
    alpha = sol.params.alpha
    h, g, index, p_vecs, q_vecs = F._beta_quadratic(cache, alpha)
    a_eq, b_eq, _, _ = F._beta_constraints(cache, alpha, index, p_vecs, q_vecs, equal_rows=True)
    _, _, vt = np.linalg.svd(a_eq)
    null = vt[np.linalg.matrix_rank(a_eq):]
    assert null.shape[0] >= 1
    x0 = np.array([sol.params.beta[i, j] for (i, j) in sorted(index, key=index.get)])
    for _ in range(10):
        direction = null.T @ rng.normal(size=null.shape[0])
        direction /= np.linalg.norm(direction)
        x = x0 + 1e-3 * direction
        beta = F._beta_from_vector(n, index, x)
        var = F._variance_sum(cache, alpha, beta)
        assert var >= base_var - 1e-9


def test_variance_dominance_when_standard_feasible(table):
    pm = np.tile(np.full(9, 1 / 9), (5, 1))
    costs = make_costs(0.05, 0.0, -0.05)
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(5), 24, costs, table)
    sol = optimize_fairness(cache)
    assert sol.sum_variance <= sol.baseline_sum_variance + 1e-9


def test_solution_jsonable(table):
    pm = np.tile(np.full(9, 1 / 9), (2, 1))
    costs = make_costs()
    cache = build_moment_cache(priors_from_matrix(pm), occupant_names(2), 24, costs, table)
    sol = optimize_fairness(cache)
    blob = json.dumps(sol.to_jsonable())
    parsed = json.loads(blob)
    assert parsed["solver_status"] in {"Exact", "ProjectedGradient", "Infeasible"}
    assert len(parsed["alpha"]) == 2
    assert isinstance(parsed["exante_benefits"][0], str)
