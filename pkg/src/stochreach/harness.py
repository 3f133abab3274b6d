"""Verification harness: brute-force oracles, random instances, error studies and timings.

The policy oracle never optimises.  It evaluates every deterministic Markov
policy with the plain forward-event recursion (indicator prefactors, full sums
over the state space) and only then takes the max/min over policies.
"""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import dp, lp
from .model import RegionMask, TransitionModel

ORACLE_MAX_STATES = 6
ORACLE_MAX_ACTIONS = 3
ORACLE_MAX_HORIZON = 4
ORACLE_MAX_POLICIES = 1_000_000

# Externally reported distances to Grid100 at N - k = 20
# and the reported wall-clock times for 20 steps.  Documentation only, never asserted.
REPORTED_ERROR_AT_20 = {
    "rbf5": 68.149624, "grid25": 21.786087, "rbf10": 35.414818, "grid50": 1.691402,
    "rbf15": 26.435041, "grid75": 3.465376, "rbf20": 24.170556,
}
REPORTED_SECONDS = {"grid100": 90.0, "grid25": 4.0, "rbf5": 27.0, "rbf20": 5355.0}

OBJECTIVES = ("max-invariance", "min-invariance", "max-reach", "min-reach", "reach-avoid")


@dataclass
class OracleResult:
    """Per-stage optimal values from exhaustive policy enumeration, shape ``(N + 1, n_states)``."""

    values: dict[str, np.ndarray] = field(default_factory=dict)
    policy_counts: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, kind: str) -> np.ndarray:
        return self.values[kind]


def enumerate_event(P: np.ndarray, gate: np.ndarray, bonus: np.ndarray, terminal: np.ndarray, N: int,
                    max_policies: int = ORACLE_MAX_POLICIES):
    """Values of every deterministic Markov policy for the event recursion
    ``V_N = terminal``, ``V_k(x) = gate(x) * sum_x' T(x'|x, mu_k(x)) V_{k+1}(x') + bonus(x)``.

    Actions are enumerated only where ``gate`` is nonzero (elsewhere they cannot
    matter).  Returns ``(max_table, min_table, policy_count)`` where the tables
    hold, per stage, the max/min over all policies started at that stage.
    """
    U, S, _ = P.shape
    free = np.flatnonzero(gate)
    n_rules = U ** free.size
    count = n_rules ** N
    if count > max_policies:
        raise ValueError(f"instance too large for enumeration: {count} policies")
    rules = np.zeros((n_rules, S), dtype=np.int64)
    if free.size:
        rules[:, free] = np.array(list(itertools.product(range(U), repeat=free.size)))
    hi = np.empty((N + 1, S))
    lo = np.empty((N + 1, S))
    tails = terminal[None, :].astype(float)
    hi[N] = lo[N] = terminal
    states = np.arange(S)
    for k in range(N - 1, -1, -1):
        nxt = np.einsum("ust,nt->uns", P, tails)
        vals = nxt[rules[:, None, :], np.arange(tails.shape[0])[None, :, None], states[None, None, :]]
        tails = (gate * vals + bonus).reshape(-1, S)
        hi[k] = tails.max(axis=0)
        lo[k] = tails.min(axis=0)
    return hi, lo, count


def _guard(model: TransitionModel, N: int) -> None:
    if model.n_states > ORACLE_MAX_STATES or model.n_actions > ORACLE_MAX_ACTIONS or N > ORACLE_MAX_HORIZON:
        raise ValueError(
            f"instance too large for enumeration: {model.n_states} states, "
            f"{model.n_actions} actions, N = {N}"
        )


def enumerate_policies(model: TransitionModel, safe: RegionMask, target: RegionMask | None, N: int,
                       kinds: Iterable[str] = OBJECTIVES, max_policies: int = ORACLE_MAX_POLICIES) -> OracleResult:
    """Exact optimal probabilities by exhaustive search over deterministic Markov policies.

    Invariance uses ``safe``; reachability uses ``target`` as the set to visit;
    reach-avoid uses both.
    """
    _guard(model, N)
    P = model.dense()
    a = safe.member.astype(float)
    out = OracleResult()
    kinds = tuple(kinds)
    if {"max-invariance", "min-invariance"} & set(kinds):
        hi, lo, n = enumerate_event(P, a, np.zeros_like(a), a, N, max_policies)
        out.values["max-invariance"], out.values["min-invariance"] = hi, lo
        out.policy_counts["invariance"] = n
    if target is not None:
        t = target.member.astype(float)
        if {"max-reach", "min-reach"} & set(kinds):
            # P(exists i >= k: x_i in target)
            hi, lo, n = enumerate_event(P, 1.0 - t, t, t, N, max_policies)
            out.values["max-reach"], out.values["min-reach"] = hi, lo
            out.policy_counts["reach"] = n
        if "reach-avoid" in kinds:
            live = a * (1.0 - t)
            hi, _, n = enumerate_event(P, live, t, t, N, max_policies)
            out.values["reach-avoid"] = hi
            out.policy_counts["reach-avoid"] = n
    return out


def random_instance(seed: int, n_states: int, n_actions: int):
    """Random row-stochastic kernel plus non-empty masks with ``target`` inside ``safe``.

    Rows are normalised positive draws with some entries zeroed, so that
    deterministic and sparse rows also occur.
    """
    rng = np.random.default_rng([7, seed])
    raw = rng.random((n_actions, n_states, n_states)) ** 2
    raw[rng.random(raw.shape) < 0.35] = 0.0
    empty = raw.sum(axis=2) == 0.0
    fill = rng.integers(n_states, size=raw.shape[:2])
    raw[empty, fill[empty]] = 1.0
    P = raw / raw.sum(axis=2, keepdims=True)
    safe = rng.random(n_states) < 0.65
    safe[rng.integers(n_states)] = True
    target = safe & (rng.random(n_states) < 0.4)
    target[rng.choice(np.flatnonzero(safe))] = True
    return TransitionModel(P), RegionMask(safe, "A"), RegionMask(target, "T")


def instance_suite(n: int, max_states: int = 4, max_actions: int = 3, max_horizon: int = 3, first_seed: int = 0):
    """``n`` seeded instances ``(seed, model, safe, target, N)`` with sizes drawn per seed."""
    for seed in range(first_seed, first_seed + n):
        rng = np.random.default_rng([11, seed])
        S = int(rng.integers(2, max_states + 1))
        U = int(rng.integers(1, max_actions + 1))
        N = int(rng.integers(0, max_horizon + 1))
        model, safe, target = random_instance(seed, S, U)
        yield seed, model, safe, target, N


@dataclass
class Check:
    seed: int
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.tol)


def check_dp_against_oracle(seed, model, safe, target, N, tol: float = 1e-12) -> list[Check]:
    """DP tables (including duality-derived reachability) against policy enumeration."""
    orc = enumerate_policies(model, safe, target, N)
    comp = {
        "max-invariance": dp.max_invariance(model, safe, N)[0],
        "min-invariance": dp.min_invariance(model, safe, N)[0],
        "max-reach": dp.max_reachability(model, target, N),
        "min-reach": dp.min_reachability(model, target, N),
        "reach-avoid": dp.reach_avoid(model, safe, target, N)[0],
    }
    checks = [Check(seed, f"dp/{k}", float(np.abs(v.values - orc[k]).max()), tol) for k, v in comp.items()]
    # duality between brute-force quantities: max reach(T) = 1 - min invariance(T^c), and mirror
    comp_t = enumerate_policies(model, target.complement(), None, N, kinds=("max-invariance", "min-invariance"))
    checks.append(Check(seed, "oracle-duality/max-reach", float(np.abs(orc["max-reach"] - (1 - comp_t["min-invariance"])).max()), tol))
    checks.append(Check(seed, "oracle-duality/min-reach", float(np.abs(orc["min-reach"] - (1 - comp_t["max-invariance"])).max()), tol))
    return checks


def check_lp_against_dp(seed, model, safe, target, N, tol: float = 1e-7, feas_tol: float = 1e-9,
                        method: str = "simplex") -> list[Check]:
    """Every LP route against DP, DP feasibility in the LP, and the one-sided bound."""
    checks = []
    if N < 1:
        return checks
    cases = []
    if safe.member.any():
        cases.append(("max-invariance", lp.build_max_invariance_lp(model, safe, N), dp.max_invariance(model, safe, N)[0], 1))
        cases.append(("min-invariance", lp.build_min_invariance_lp(model, safe, N), dp.min_invariance(model, safe, N)[0], -1))
    if safe.minus(target).member.any():
        cases.append(("reach-avoid", lp.build_reach_avoid_lp(model, safe, target, N), dp.reach_avoid(model, safe, target, N)[0], 1))
    for name, prog, table, side in cases:
        rep = lp.run(prog, method)
        got = lp.assemble_value_table(rep, prog, name, model.n_states, target if name == "reach-avoid" else None)
        checks.append(Check(seed, f"lp/{name}", float(np.abs(got.values - table.values).max()), tol))
        checks.append(Check(seed, f"lp-feasible-dp/{name}", lp.max_violation(prog, lp.table_vector(prog, table)), feas_tol))
        # one-sided bound: max-type LP values never below DP, min-type never above
        gap = side * (table.values - got.values)
        checks.append(Check(seed, f"one-sided/{name}", float(max(gap.max(), 0.0)), tol))
        checks.append(Check(seed, f"residual/{name}", lp.max_violation(prog, rep.x), feas_tol))
    for sense, ref in (("max", dp.max_invariance), ("min", dp.min_invariance)):
        if not safe.member.any():
            continue
        V, pol, Q = lp.solve_q_stagewise(model, safe, N, sense, method)
        V_dp, pol_dp, Q_dp = ref(model, safe, N)
        checks.append(Check(seed, f"q-lp/{sense}", float(np.abs(V.values - V_dp.values).max()), tol))
        checks.append(Check(seed, f"q-lp-table/{sense}", float(np.abs(Q.values - Q_dp.values).max()), tol))
    return checks


def write_checks_csv(path, checks: list[Check]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "check", "error", "tol", "ok"])
        for c in checks:
            w.writerow([c.seed, c.name, repr(float(c.error)), repr(float(c.tol)), int(c.ok)])


# -- LP oracle ----------------------------------------------------------------

def random_lp(seed: int, n: int = 6, m: int = 8) -> lp.LinearProgram:
    """Feasible, bounded random LP: every variable has finite bounds and the rows
    are satisfied by a hidden interior point."""
    rng = np.random.default_rng([13, seed])
    A = rng.normal(size=(m, n))
    A[rng.random(A.shape) < 0.2] = 0.0
    lower = np.where(rng.random(n) < 0.7, 0.0, rng.uniform(-3, 0, n))
    upper = lower + rng.uniform(0.5, 5.0, n)
    x0 = rng.uniform(lower, upper)
    n_eq = int(rng.integers(0, 3))
    senses = np.array(["="] * n_eq + list(rng.choice(["<=", ">="], m - n_eq)))
    ax = A @ x0
    slack = rng.uniform(0.0, 2.0, m)
    rhs = np.where(senses == "<=", ax + slack, np.where(senses == ">=", ax - slack, ax))
    return lp.LinearProgram(str(rng.choice(["min", "max"])), rng.normal(size=n), A, senses, rhs, lower, upper)


def vertex_optimum(prog: lp.LinearProgram, tol: float = 1e-9) -> float:
    """Optimal objective by enumerating every basic solution of a bounded LP."""
    A = prog.A.toarray()
    n = prog.n_vars
    if not (np.all(np.isfinite(prog.lower)) and np.all(np.isfinite(prog.upper))):
        raise ValueError("vertex enumeration needs finite bounds")
    eq = prog.row_sense == "="
    G = [A[prog.row_sense == "<="], -A[prog.row_sense == ">="], np.eye(n), -np.eye(n)]
    h = [prog.rhs[prog.row_sense == "<="], -prog.rhs[prog.row_sense == ">="], prog.upper, -prog.lower]
    G = np.vstack(G)
    h = np.concatenate(h)
    E, f = A[eq], prog.rhs[eq]
    k = n - E.shape[0]
    combos = np.array(list(itertools.combinations(range(G.shape[0]), k)), dtype=np.int64).reshape(-1, k)
    M = np.concatenate([np.broadcast_to(E, (len(combos),) + E.shape), G[combos]], axis=1)
    rhs = np.concatenate([np.broadcast_to(f, (len(combos), f.size)), h[combos]], axis=1)
    det = np.linalg.det(M)
    keep = np.abs(det) > 1e-10
    pts = np.linalg.solve(M[keep], rhs[keep][..., None])[..., 0]
    feas = np.all(pts @ G.T <= h + tol, axis=1) & np.all(np.abs(pts @ E.T - f) <= tol, axis=1)
    if not feas.any():
        raise ValueError("no feasible vertex")
    vals = pts[feas] @ prog.cost
    return float(vals.max() if prog.sense == "max" else vals.min())


# -- error study and timings ----------------------------------------------------

StageEvaluator = Callable[[int, np.ndarray], np.ndarray]


def grid_evaluator(grid, table: dp.ValueTable) -> StageEvaluator:
    """Piecewise-constant lookup of a gridded table at arbitrary points."""

    def evaluate(k, points):
        return table.values[k][grid.locate(points)]

    evaluate.horizon = table.horizon
    return evaluate


@dataclass
class ErrorReport:
    """``distances[method][N - k]``: two-norm distance to the reference at stage k."""

    distances: dict[str, np.ndarray]
    horizon: int

    def to_csv(self, path, first_offset: int = 1) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "timestep", "distance"])
            for name, d in self.distances.items():
                for off in range(first_offset, self.horizon + 1):
                    w.writerow([name, off, repr(float(d[off]))])


def error_study(reference: StageEvaluator, candidates: Mapping[str, StageEvaluator], points: np.ndarray,
                horizon: int) -> ErrorReport:
    """``sqrt(sum_points (V_cand - V_ref)^2)`` per timestep offset ``N - k``, for ``k = N..0``."""
    for name, cand in candidates.items():
        h = getattr(cand, "horizon", horizon)
        if h != horizon:
            raise ValueError(f"{name} has horizon {h}, reference has {horizon}")
    ref = {k: reference(k, points) for k in range(horizon + 1)}
    out = {}
    for name, cand in candidates.items():
        d = np.zeros(horizon + 1)
        for k in range(horizon + 1):
            d[horizon - k] = np.sqrt(np.sum((cand(k, points) - ref[k]) ** 2))
        out[name] = d
    return ErrorReport(out, horizon)


def evaluation_points(lower, upper, per_axis: int = 100) -> np.ndarray:
    """Cell centers of a ``per_axis``-per-dimension grid over the box."""
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class TimingRow:
    name: str
    seconds: float
    reported_seconds: float | None


def timing_report(runs: Iterable[tuple[str, Callable[[], object]]]) -> list[TimingRow]:
    rows = []
    for name, fn in runs:
        t0 = time.perf_counter()
        fn()
        rows.append(TimingRow(name, time.perf_counter() - t0, REPORTED_SECONDS.get(name)))
    return rows


def write_timing_csv(path, rows: list[TimingRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seconds", "reported_seconds"])
        for r in rows:
            w.writerow([r.name, f"{r.seconds:.3f}", "" if r.reported_seconds is None else r.reported_seconds])
