"""Prior tracking and the two-stage fairness program over transfer parameters.

Stage 1 makes every occupant's expected net benefit equal; stage 2 minimizes
the summed variance of realized net benefits, subject to stage 1 holding and
to the structural constraints that keep the transfers budget balanced. Both
stages work off a moment cache: first and second moments of the per-round
random quantities (chosen-outcome values, incremental cost, and the two
externality components), under which expected benefit and variance are
closed-form polynomials in the parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .mechanism import (
    N_TYPES,
    MechanismParams,
    ValuationTable,
    decide_many,
    enumerate_type_grid,
    joint_probabilities,
)

if TYPE_CHECKING:
    from .energy import CostVector

EXHAUSTIVE_STATE_LIMIT = 10**6
EQUALITY_TOL = 1e-6
CONVERGENCE_TOL = 1e-10
MAX_OUTER_ITERATIONS = 100
MAX_PG_ITERATIONS = 10**5


class FairnessError(Exception):
    pass


class MissingPriorError(FairnessError):
    """No prior is initialized for an (occupant, temperature) pair."""


class StateSpaceError(FairnessError):
    """Exhaustive enumeration would exceed the state-space budget."""


def prior_update(counts, observed: int | None = None, smoothing: float = 1.0) -> np.ndarray:
    """Smoothed type distribution from observation counts.

    Optionally folds one new observation in first. With pseudo-count
    `smoothing` on each of the nine types, no type ever has zero probability,
    so expectations stay well defined even from a cold start.
    """
    if smoothing <= 0:
        raise FairnessError("smoothing pseudo-count must be positive")
    c = np.asarray(counts, dtype=float).copy()
    if c.shape != (N_TYPES,):
        raise FairnessError(f"counts must have length {N_TYPES}")
    if observed is not None:
        c[observed - 1] += 1
    return (c + smoothing) / (c.sum() + N_TYPES * smoothing)


class PriorCounts:
    """Per-(occupant, temperature) observation counts over the nine types."""

    def __init__(self):
        self._counts: dict[str, dict[int, np.ndarray]] = {}

    def counts(self, occupant: str, temp: int) -> np.ndarray:
        return self._counts.get(occupant, {}).get(temp, np.zeros(N_TYPES)).copy()

    def observe(self, occupant: str, temp: int, type_id: int) -> None:
        cell = self._counts.setdefault(occupant, {}).setdefault(temp, np.zeros(N_TYPES))
        cell[type_id - 1] += 1

    def smoothed(self, occupant: str, temp: int, smoothing: float = 1.0) -> np.ndarray:
        return prior_update(self.counts(occupant, temp), smoothing=smoothing)

    def to_jsonable(self) -> dict:
        return {
            occ: {str(t): [float(x) for x in vec] for t, vec in sorted(temps.items())}
            for occ, temps in sorted(self._counts.items())
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "PriorCounts":
        out = cls()
        for occ, temps in data.items():
            for t, vec in temps.items():
                out._counts.setdefault(occ, {})[int(t)] = np.asarray(vec, dtype=float)
        return out


class PriorSet:
    """Probability vectors over the nine types, per occupant per temperature."""

    def __init__(self, vectors: dict[str, dict[int, Sequence[float]]]):
        self.vectors: dict[str, dict[int, np.ndarray]] = {}
        for occ, temps in vectors.items():
            self.vectors[occ] = {}
            for temp, vec in temps.items():
                v = np.asarray(vec, dtype=float)
                if v.shape != (N_TYPES,):
                    raise FairnessError(
                        f"prior for {occ}@{temp} must have {N_TYPES} entries"
                    )
                if np.any(v < 0):
                    raise FairnessError(f"prior for {occ}@{temp} has negative mass")
                if abs(v.sum() - 1.0) > 1e-12:
                    raise FairnessError(f"prior for {occ}@{temp} must sum to 1")
                self.vectors[occ][int(temp)] = v

    def occupants(self) -> list[str]:
        return list(self.vectors.keys())

    def vector(self, occupant: str, temp: int) -> np.ndarray:
        try:
            return self.vectors[occupant][temp]
        except KeyError:
            raise MissingPriorError(
                f"no prior initialized for occupant {occupant!r} at {temp} degC"
            ) from None

    def matrix(self, occupants: Sequence[str], temp: int) -> np.ndarray:
        return np.stack([self.vector(o, temp) for o in occupants])

    @classmethod
    def from_counts(
        cls,
        counts: PriorCounts,
        occupants: Sequence[str],
        temps: Sequence[int],
        smoothing: float = 1.0,
    ) -> "PriorSet":
        return cls(
            {o: {t: counts.smoothed(o, t, smoothing) for t in temps} for o in occupants}
        )

    def to_jsonable(self) -> dict:
        return {
            occ: {str(t): [float(x) for x in vec] for t, vec in sorted(temps.items())}
            for occ, temps in sorted(self.vectors.items())
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_jsonable(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PriorSet":
        with open(path) as fh:
            data = json.load(fh)
        return cls({occ: {int(t): v for t, v in temps.items()} for occ, temps in data.items()})


@dataclass(frozen=True)
class MomentCache:
    """First and second moments of the round's random quantities.

    The random vector is Z = (U_1..U_n, D, A_1..A_n, B_1..B_n) where U_i is
    occupant i's value of the chosen outcome, D the incremental cost, and
    A_i / B_i the value part and cost part of i's expected externality as
    functions of i's own type. Expected benefit is linear and the variance
    sum quadratic in the parameters once expressed through Z.
    """

    occupants: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray
    psi_value: np.ndarray  # (n, 9): expected others' value given own type
    psi_cost: np.ndarray   # (n, 9): expected incremental cost given own type
    provenance: str

    @property
    def n(self) -> int:
        return len(self.occupants)

    # index helpers into Z
    def i_value(self, i: int) -> int:
        return i

    @property
    def i_cost(self) -> int:
        return self.n

    def i_psi_value(self, i: int) -> int:
        return self.n + 1 + i

    def i_psi_cost(self, i: int) -> int:
        return 2 * self.n + 1 + i

    @property
    def expected_welfare(self) -> float:
        return float(self.mean[: self.n].sum() - self.mean[self.i_cost])


def _exclusive_products(q: np.ndarray) -> np.ndarray:
    """Per-row products of all columns except each one (cumprod trick)."""
    m, n = q.shape
    left = np.ones((m, n))
    right = np.ones((m, n))
    for i in range(1, n):
        left[:, i] = left[:, i - 1] * q[:, i - 1]
        right[:, n - 1 - i] = right[:, n - i] * q[:, n - i]
    return left * right


def _assemble_moments(occupants, u, d, psi_value, psi_cost, types_grid, weights, provenance):
    n = len(occupants)
    a_cols = np.empty((types_grid.shape[0], n))
    b_cols = np.empty((types_grid.shape[0], n))
    for i in range(n):
        a_cols[:, i] = psi_value[i][types_grid[:, i]]
        b_cols[:, i] = psi_cost[i][types_grid[:, i]]
    z = np.concatenate([u, d[:, None], a_cols, b_cols], axis=1)
    mean = weights @ z
    second = z.T @ (z * weights[:, None])
    cov = second - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    diag = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(diag, 0.0))
    return MomentCache(tuple(occupants), mean, cov, psi_value, psi_cost, provenance)


def build_moment_cache(
    priors: PriorSet,
    occupants: Sequence[str],
    t0: int,
    costs: "CostVector",
    table: ValuationTable,
    mode: str = "exhaustive",
    samples: int | None = None,
    seed: int | None = None,
) -> MomentCache:
    """Compute the moment cache under independent per-occupant priors."""
    occupants = list(occupants)
    n = len(occupants)
    if n < 2:
        raise FairnessError("the fairness program needs at least two occupants")
    pm = priors.matrix(occupants, t0)

    if mode == "exhaustive":
        if N_TYPES**n > EXHAUSTIVE_STATE_LIMIT:
            raise StateSpaceError(
                f"{N_TYPES}**{n} joint profiles exceed the exhaustive budget "
                f"of {EXHAUSTIVE_STATE_LIMIT}; use monte-carlo mode"
            )
        grid = enumerate_type_grid(n)
        weights = joint_probabilities(grid, pm)
        decision = decide_many(grid, costs, table)
        u, d = decision.utilities, decision.delta
        total_u = u.sum(axis=1)
        q = np.empty((grid.shape[0], n))
        for i in range(n):
            q[:, i] = pm[i, grid[:, i]]
        w_excl = _exclusive_products(q)  # opponent weights; sum to 1 per own type
        psi_value = np.zeros((n, N_TYPES))
        psi_cost = np.zeros((n, N_TYPES))
        for i in range(n):
            w = w_excl[:, i]
            psi_value[i] = np.bincount(
                grid[:, i], weights=w * (total_u - u[:, i]), minlength=N_TYPES
            )
            psi_cost[i] = np.bincount(grid[:, i], weights=w * d, minlength=N_TYPES)
        return _assemble_moments(
            occupants, u, d, psi_value, psi_cost, grid, weights, "exhaustive"
        )

    if mode == "monte-carlo":
        if samples is None or seed is None:
            raise FairnessError("monte-carlo mode needs explicit samples and seed")
        rng = np.random.default_rng(seed)
        grid = np.stack(
            [rng.choice(N_TYPES, size=samples, p=pm[i]) for i in range(n)], axis=1
        ).astype(np.int8)
        weights = np.full(samples, 1.0 / samples)
        decision = decide_many(grid, costs, table)
        # Externality tables from dedicated opponent samples per occupant so
        # low-probability own types still get stable estimates.
        psi_value = np.zeros((n, N_TYPES))
        psi_cost = np.zeros((n, N_TYPES))
        for i in range(n):
            others = [j for j in range(n) if j != i]
            opp = np.stack(
                [rng.choice(N_TYPES, size=samples, p=pm[j]) for j in others], axis=1
            ).astype(np.int8)
            full = np.empty((samples, n), dtype=np.int8)
            full[:, others] = opp
            for k in range(N_TYPES):
                full[:, i] = k
                dec = decide_many(full, costs, table)
                psi_value[i, k] = float(
                    (dec.utilities.sum(axis=1) - dec.utilities[:, i]).mean()
                )
                psi_cost[i, k] = float(dec.delta.mean())
        return _assemble_moments(
            occupants,
            decision.utilities,
            decision.delta,
            psi_value,
            psi_cost,
            grid,
            weights,
            f"monte-carlo(count={samples},seed={seed})",
        )

    raise FairnessError(f"unknown moment mode {mode!r}")


def _coeff_matrix(cache: MomentCache, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Rows c_i with net benefit pi_i = c_i . Z for the given parameters."""
    n = cache.n
    s = alpha.sum()
    c = np.zeros((n, 3 * n + 1))
    for i in range(n):
        c[i, cache.i_value(i)] = 1.0
        c[i, cache.i_cost] = -alpha[i]
        c[i, cache.i_psi_value(i)] = 1.0
        c[i, cache.i_psi_cost(i)] = -(s - alpha[i])
        for j in range(n):
            if j == i:
                continue
            c[i, cache.i_psi_value(j)] = -beta[i, j]
            c[i, cache.i_psi_cost(j)] = beta[i, j] * (s - alpha[j])
    return c


def exante_net_benefits(cache: MomentCache, params: MechanismParams) -> np.ndarray:
    """Expected net benefit per occupant under the given parameters."""
    params.validate(cache.n)
    return _coeff_matrix(cache, params.alpha, params.beta) @ cache.mean


def expost_variance_sum(cache: MomentCache, params: MechanismParams) -> float:
    """Sum over occupants of the variance of realized net benefit."""
    params.validate(cache.n)
    return _variance_sum(cache, params.alpha, params.beta)


def _variance_sum(cache, alpha, beta) -> float:
    c = _coeff_matrix(cache, alpha, beta)
    return float(np.einsum("ik,kl,il->", c, cache.cov, c))


def _exante(cache, alpha, beta) -> np.ndarray:
    return _coeff_matrix(cache, alpha, beta) @ cache.mean


class SolverStatus(str, Enum):
    EXACT = "Exact"
    PROJECTED_GRADIENT = "ProjectedGradient"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class FairnessSolution:
    params: MechanismParams
    exante_benefits: np.ndarray
    equality_residual: float
    sum_variance: float
    baseline_sum_variance: float
    solver_status: SolverStatus
    iterations: int
    provenance: str

    def to_jsonable(self) -> dict:
        return {
            "alpha": [float(a) for a in self.params.alpha],
            "beta": [[float(b) for b in row] for row in self.params.beta],
            "exante_benefits": [str(float(v)) for v in self.exante_benefits],
            "equality_residual": str(float(self.equality_residual)),
            "sum_variance": float(self.sum_variance),
            "baseline_sum_variance": float(self.baseline_sum_variance),
            "solver_status": self.solver_status.value,
            "iterations": self.iterations,
            "provenance": self.provenance,
        }


def _solve_eq_qp(h, g, a_eq, b_eq):
    """min 1/2 x'Hx + g'x s.t. Ax = b via the KKT system (least squares).

    Returns the primal point and the worst constraint violation, which is the
    caller's signal that the constraint rows were inconsistent.
    """
    nv = h.shape[0]
    m = a_eq.shape[0]
    kkt = np.block([[h, a_eq.T], [a_eq, np.zeros((m, m))]])
    rhs = np.concatenate([-g, b_eq])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    x = sol[:nv]
    resid = float(np.max(np.abs(a_eq @ x - b_eq))) if m else 0.0
    return x, resid


def _beta_pairs(n):
    pairs = [(i, j) for i in range(n) for j in range(n) if j != i]
    return pairs, {p: k for k, p in enumerate(pairs)}


def _beta_vectors(cache, alpha):
    """p_i (fixed part) and q_j (per-beta-entry part) of pi_i in Z coordinates."""
    n = cache.n
    s = alpha.sum()
    dim = 3 * n + 1
    q_vecs = np.zeros((n, dim))
    for j in range(n):
        q_vecs[j, cache.i_psi_value(j)] = -1.0
        q_vecs[j, cache.i_psi_cost(j)] = s - alpha[j]
    p_vecs = np.zeros((n, dim))
    for i in range(n):
        p_vecs[i, cache.i_value(i)] = 1.0
        p_vecs[i, cache.i_cost] = -alpha[i]
        p_vecs[i, cache.i_psi_value(i)] = 1.0
        p_vecs[i, cache.i_psi_cost(i)] = -(s - alpha[i])
    return p_vecs, q_vecs


def _beta_quadratic(cache, alpha):
    """Variance sum as 1/2 x'Hx + g'x + const over flattened beta entries."""
    n = cache.n
    pairs, index = _beta_pairs(n)
    nv = len(pairs)
    p_vecs, q_vecs = _beta_vectors(cache, alpha)
    q_cov_q = q_vecs @ cache.cov @ q_vecs.T
    p_cov_q = p_vecs @ cache.cov @ q_vecs.T
    h = np.zeros((nv, nv))
    g = np.zeros(nv)
    for (i, j), k in index.items():
        g[k] = 2.0 * p_cov_q[i, j]
        for j2 in range(n):
            if j2 != i:
                h[k, index[(i, j2)]] = 2.0 * q_cov_q[j, j2]
    return h, g, index, p_vecs, q_vecs


def _beta_constraints(cache, alpha, index, p_vecs, q_vecs, *, equal_rows: bool):
    n = cache.n
    nv = len(index)
    q_mean = q_vecs @ cache.mean
    p_mean = p_vecs @ cache.mean
    rows, rhs = [], []
    for j in range(n):  # each column redistributes exactly once
        row = np.zeros(nv)
        for i in range(n):
            if i != j:
                row[index[(i, j)]] = 1.0
        rows.append(row)
        rhs.append(1.0)
    if equal_rows:
        for i in range(n - 1):  # E[pi_i] = E[pi_{i+1}]
            row = np.zeros(nv)
            for j in range(n):
                if j != i:
                    row[index[(i, j)]] += q_mean[j]
                if j != i + 1:
                    row[index[(i + 1, j)]] -= q_mean[j]
            rows.append(row)
            rhs.append(p_mean[i + 1] - p_mean[i])
    return np.array(rows), np.array(rhs), p_mean, q_mean


def _beta_from_vector(n, index, x):
    beta = np.zeros((n, n))
    for (i, j), k in index.items():
        beta[i, j] = x[k]
    return beta


def _alpha_pieces(cache, beta):
    """Affine decomposition c_i(alpha) = c0_i + Ci @ alpha."""
    n = cache.n
    dim = 3 * n + 1
    c0 = np.zeros((n, dim))
    ci = np.zeros((n, dim, n))
    for i in range(n):
        c0[i, cache.i_value(i)] = 1.0
        c0[i, cache.i_psi_value(i)] = 1.0
        ci[i, cache.i_cost, i] = -1.0
        for k in range(n):
            if k != i:
                ci[i, cache.i_psi_cost(i), k] = -1.0
        for j in range(n):
            if j == i:
                continue
            c0[i, cache.i_psi_value(j)] = -beta[i, j]
            for k in range(n):
                if k != j:
                    ci[i, cache.i_psi_cost(j), k] = beta[i, j]
    return c0, ci


def _alpha_quadratic(cache, beta):
    n = cache.n
    c0, ci = _alpha_pieces(cache, beta)
    h = np.zeros((n, n))
    g = np.zeros(n)
    for i in range(n):
        h += 2.0 * ci[i].T @ cache.cov @ ci[i]
        g += 2.0 * ci[i].T @ cache.cov @ c0[i]
    lin = np.stack([ci[i].T @ cache.mean for i in range(n)])  # (n, n) rows per occupant
    const = c0 @ cache.mean
    return h, g, lin, const


def _alpha_constraints(lin, const, n, *, equal_rows: bool):
    rows = [np.ones(n)]
    rhs = [1.0]
    if equal_rows:
        for i in range(n - 1):
            rows.append(lin[i] - lin[i + 1])
            rhs.append(const[i + 1] - const[i])
    return np.array(rows), np.array(rhs)


def _solve_bounded_qp(h, g, a_eq, b_eq, n):
    """Equality QP with nonnegative variables: add-only active set, then a
    projected-gradient polish if clamping leaves anything unresolved."""
    active: list[int] = []
    for _ in range(n + 1):
        extra = [np.eye(n)[k][None, :] for k in active]
        rows = np.vstack([a_eq] + extra) if extra else a_eq
        rhs = np.concatenate([b_eq] + [np.zeros(1)] * len(active))
        x, _ = _solve_eq_qp(h, g, rows, rhs)
        if np.all(x >= -1e-10):
            return np.maximum(x, 0.0), bool(active)
    x = _projected_gradient(h, g, a_eq, b_eq, np.full(n, 1.0 / n))
    return x, True


def _project_affine(x, a_eq, b_eq):
    resid = a_eq @ x - b_eq
    correction, *_ = np.linalg.lstsq(a_eq, resid, rcond=None)
    return x - correction


def _project_polytope(x, a_eq, b_eq, rounds=50):
    """Alternating projections onto the affine rows and the nonnegative orthant."""
    y = x.copy()
    for _ in range(rounds):
        y = _project_affine(y, a_eq, b_eq)
        if np.all(y >= -1e-12):
            break
        y = np.maximum(y, 0.0)
    return np.maximum(_project_affine(y, a_eq, b_eq), 0.0)


def _projected_gradient(h, g, a_eq, b_eq, x0):
    x = _project_polytope(x0, a_eq, b_eq)
    step = 1.0 / max(np.linalg.norm(h, 2), 1e-12)
    obj = 0.5 * x @ h @ x + g @ x
    for _ in range(MAX_PG_ITERATIONS):
        grad = h @ x + g
        candidate = _project_polytope(x - step * grad, a_eq, b_eq)
        if np.linalg.norm(candidate - x) < CONVERGENCE_TOL:
            return candidate
        cand_obj = 0.5 * candidate @ h @ candidate + g @ candidate
        if cand_obj <= obj + 1e-15:
            x, obj = candidate, cand_obj
        else:
            step *= 0.5  # backtrack
            if step < 1e-16:
                return x
    return x


def _spread(values: np.ndarray) -> float:
    return float(values.max() - values.min())


def _snap_alpha(alpha: np.ndarray) -> np.ndarray | None:
    """Clip and renormalize a near-feasible alpha exactly onto the simplex."""
    a = np.maximum(alpha, 0.0)
    s = a.sum()
    if s <= 0 or abs(s - 1.0) > 1e-3:
        return None
    return a / s


def _snap_beta(beta: np.ndarray) -> np.ndarray | None:
    """Zero the diagonal and renormalize each column to sum exactly to one."""
    b = beta.copy()
    np.fill_diagonal(b, 0.0)
    colsums = b.sum(axis=0)
    if np.any(np.abs(colsums - 1.0) > 1e-3):
        return None
    b = b / colsums[None, :]
    np.fill_diagonal(b, 0.0)
    return b


def _equalize(cache, alpha, beta):
    """Stage 1: drive expected benefits to the common value E[W]/n.

    Alternates a beta least-squares step (exact, column sums held) with an
    alpha step on the simplex. Returns the best point found and whether the
    alpha bounds ever activated.
    """
    n = cache.n
    target = cache.expected_welfare / n
    used_bounds = False
    for _ in range(50):
        before = _spread(_exante(cache, alpha, beta))
        if before <= 1e-12:
            break
        h, g, index, p_vecs, q_vecs = _beta_quadratic(cache, alpha)
        a_eq, b_eq, p_mean, q_mean = _beta_constraints(
            cache, alpha, index, p_vecs, q_vecs, equal_rows=False
        )
        rows_e = np.zeros((n, len(g)))
        for (i, j), k in index.items():
            rows_e[i, k] = q_mean[j]
        hr = 2.0 * rows_e.T @ rows_e
        gr = 2.0 * rows_e.T @ (p_mean - target)
        x, _ = _solve_eq_qp(hr, gr, a_eq, b_eq)
        beta_new = _snap_beta(_beta_from_vector(n, index, x))
        if beta_new is None:
            beta_new = beta

        _, _, lin, const = _alpha_quadratic(cache, beta_new)
        hr = 2.0 * lin.T @ lin
        gr = 2.0 * lin.T @ (const - target)
        alpha_raw, bounded = _solve_bounded_qp(hr, gr, np.ones((1, n)), np.ones(1), n)
        alpha_new = _snap_alpha(alpha_raw)
        if alpha_new is None:
            alpha_new = alpha

        after = _spread(_exante(cache, alpha_new, beta_new))
        if after < before:
            alpha, beta = alpha_new, beta_new
            used_bounds = used_bounds or bounded
        if after < 1e-9 or abs(before - after) < 1e-14:
            break
    return alpha, beta, used_bounds


def optimize_fairness(cache: MomentCache) -> FairnessSolution:
    """Equalize expected net benefits, then minimize the variance sum.

    Alternating minimization: the beta block is an exact equality-constrained
    QP (KKT system); the alpha block adds the nonnegativity bound, handled by
    an active set with a projected-gradient fallback. Each block solve is a
    convex QP, so the objective is monotone along the iteration.
    """
    n = cache.n
    standard = MechanismParams.standard(n)
    baseline_var = expost_variance_sum(cache, standard)

    alpha = standard.alpha.copy()
    beta = standard.beta.copy()
    used_bounds = False

    if _spread(_exante(cache, alpha, beta)) > EQUALITY_TOL:
        alpha, beta, used_bounds = _equalize(cache, alpha, beta)
    residual = _spread(_exante(cache, alpha, beta))
    if residual > EQUALITY_TOL:
        params = MechanismParams(alpha, beta)
        return FairnessSolution(
            params,
            _exante(cache, alpha, beta),
            residual,
            _variance_sum(cache, alpha, beta),
            baseline_var,
            SolverStatus.INFEASIBLE,
            0,
            cache.provenance,
        )

    obj = _variance_sum(cache, alpha, beta)
    iterations = 0
    for iterations in range(1, MAX_OUTER_ITERATIONS + 1):
        prev_obj = obj

        h, g, index, p_vecs, q_vecs = _beta_quadratic(cache, alpha)
        a_eq, b_eq, _, _ = _beta_constraints(
            cache, alpha, index, p_vecs, q_vecs, equal_rows=True
        )
        x, resid = _solve_eq_qp(h, g, a_eq, b_eq)
        if resid > 1e-7:
            # Equal-benefit rows over-determine beta (n == 2): hold column sums
            # only and leave the equalities to the alpha block.
            a_eq, b_eq, _, _ = _beta_constraints(
                cache, alpha, index, p_vecs, q_vecs, equal_rows=False
            )
            x, _ = _solve_eq_qp(h, g, a_eq, b_eq)
        candidate = _snap_beta(_beta_from_vector(n, index, x))
        if candidate is not None:
            cand_obj = _variance_sum(cache, alpha, candidate)
            if (
                cand_obj <= obj + 1e-12
                and _spread(_exante(cache, alpha, candidate)) <= EQUALITY_TOL
            ):
                beta, obj = candidate, cand_obj

        h, g, lin, const = _alpha_quadratic(cache, beta)
        a_eq, b_eq = _alpha_constraints(lin, const, n, equal_rows=True)
        alpha_raw, bounded = _solve_bounded_qp(h, g, a_eq, b_eq, n)
        alpha_new = _snap_alpha(alpha_raw)
        if alpha_new is not None:
            cand_obj = _variance_sum(cache, alpha_new, beta)
            if (
                cand_obj <= obj + 1e-12
                and _spread(_exante(cache, alpha_new, beta)) <= EQUALITY_TOL
            ):
                alpha, obj = alpha_new, cand_obj
                used_bounds = used_bounds or bounded

        if abs(prev_obj - obj) < CONVERGENCE_TOL:
            break

    params = MechanismParams(alpha, beta)
    params.validate(n)
    benefits = _exante(cache, alpha, beta)
    residual = _spread(benefits)
    status = SolverStatus.PROJECTED_GRADIENT if used_bounds else SolverStatus.EXACT
    if residual > EQUALITY_TOL:
        status = SolverStatus.INFEASIBLE
    return FairnessSolution(
        params,
        benefits,
        residual,
        obj,
        baseline_var,
        status,
        iterations,
        cache.provenance,
    )
