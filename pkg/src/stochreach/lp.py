"""Linear programs equivalent to the invariance and reach-avoid recursions on a finite model.

Variables are value-function entries ``V_k(x)`` (or ``Q_k(x, u)`` for the stagewise
Q program).  The max-invariance and reach-avoid programs minimise a positive
weighting of the values subject to one ``>=`` row per (stage, state, action);
the min-invariance program is the mirror image (maximise, ``<=`` rows).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dp import PolicyTable, QTable, ValueTable
from .model import RegionMask, TransitionModel
from .simplex import OPTIMAL, SolveReport, solve

# dense simplex above this many (rows * columns) entries is routed to HiGHS by "auto"
AUTO_DENSE_LIMIT = 400_000


class LPError(RuntimeError):
    """An LP solve ended with a non-optimal status."""

    def __init__(self, report: SolveReport):
        super().__init__(f"LP solve failed: {report.status} {report.message}".strip())
        self.report = report


class DegenerateLP(ValueError):
    """The program would have no variables (e.g. empty safe set)."""


@dataclass
class LinearProgram:
    sense: str
    cost: np.ndarray
    A: sp.csr_matrix
    row_sense: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: list = field(default_factory=list)
    kind: str = ""

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.row_sense = np.asarray(self.row_sense, dtype="<U2")
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        m, n = self.A.shape
        if self.cost.shape != (n,) or self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("cost and bounds must have one entry per variable")
        if self.rhs.shape != (m,) or self.row_sense.shape != (m,):
            raise ValueError("rhs and row senses must have one entry per row")
        if not set(self.row_sense.tolist()) <= {"<=", ">=", "="}:
            raise ValueError("row senses must be '<=', '>=' or '='")
        if self.names and len(self.names) != n:
            raise ValueError("name map must cover every variable")

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        return float(self.cost @ np.asarray(x, dtype=float))

    def with_rows(self, A, row_sense, rhs) -> "LinearProgram":
        return LinearProgram(
            self.sense, self.cost, sp.vstack([self.A, sp.csr_matrix(A)]),
            np.concatenate([self.row_sense, np.asarray(row_sense)]),
            np.concatenate([self.rhs, np.asarray(rhs, dtype=float)]),
            self.lower, self.upper, list(self.names), self.kind,
        )

    def with_upper(self, upper: float) -> "LinearProgram":
        return LinearProgram(self.sense, self.cost, self.A, self.row_sense, self.rhs,
                             self.lower, np.full(self.n_vars, float(upper)), list(self.names), self.kind)

    def to_lp_text(self) -> str:
        """CPLEX-LP style text (objective, rows, bounds) for cross-checking elsewhere."""
        def var(j):
            return f"x{j}"

        def expr(coeffs):
            terms = [f"{'+' if v >= 0 else '-'} {abs(v)!r} {var(j)}" for j, v in coeffs if v != 0.0]
            return " ".join(terms) if terms else "0 x0"

        lines = ["\\ variable map: " + ", ".join(f"{var(j)}={n}" for j, n in enumerate(self.names))]
        lines.append("Minimize" if self.sense == "min" else "Maximize")
        lines.append(" obj: " + expr(enumerate(self.cost)))
        lines.append("Subject To")
        A = self.A.tocsr()
        for i in range(self.n_rows):
            row = A.getrow(i)
            coeffs = sorted(zip(row.indices.tolist(), row.data.tolist()))
            lines.append(f" r{i}: {expr(coeffs)} {self.row_sense[i]} {float(self.rhs[i])!r}")
        lines.append("Bounds")
        for j in range(self.n_vars):
            lo = self.lower[j]
            hi = self.upper[j]
            lo_s = "-inf" if not np.isfinite(lo) else repr(float(lo))
            hi_s = "+inf" if not np.isfinite(hi) else repr(float(hi))
            lines.append(f" {lo_s} <= {var(j)} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"


def max_violation(lp: LinearProgram, x) -> float:
    """Largest constraint or bound violation of ``x`` (0 when feasible).

    Computed directly from the program data, independently of any solver state.
    """
    x = np.asarray(x, dtype=float)
    ax = lp.A @ x
    viol = np.zeros(lp.n_rows)
    le = lp.row_sense == "<="
    ge = lp.row_sense == ">="
    eq = lp.row_sense == "="
    viol[le] = ax[le] - lp.rhs[le]
    viol[ge] = lp.rhs[ge] - ax[ge]
    viol[eq] = np.abs(ax[eq] - lp.rhs[eq])
    bound = np.maximum(lp.lower - x, x - lp.upper)
    return float(max(viol.max(initial=0.0), bound.max(initial=0.0), 0.0))


@dataclass(frozen=True)
class CMeasure:
    """Strictly positive weight per state on the safe set, used in LP objectives."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @classmethod
    def uniform(cls, n_states: int) -> "CMeasure":
        return cls(np.ones(n_states))

    def check(self, region: RegionMask) -> None:
        if self.weights.shape != (len(region),):
            raise ValueError("c-measure needs one weight per state")
        if np.any(self.weights[region.member] <= 0.0):
            raise ValueError("c-measure must be strictly positive on the safe set")


def _blocks(model: TransitionModel, rows_of: np.ndarray, cols_of: np.ndarray) -> list[sp.csr_matrix]:
    return [m[rows_of][:, cols_of].tocsr() for m in model.matrices]


def _chain_lp(model, var_cells, bonus, terminal, N, maximise, c, upper, kind):
    """Concatenated program over stages 0..N for variables on ``var_cells``.

    Rows, in (stage, state, action) order:
    ``V_k(x) - sum_{x' in var} T(x'|x,u) V_{k+1}(x')  >=  bonus(x, u)``  (``<=`` when maximising),
    followed by ``V_N(x) = terminal`` for every variable state.
    """
    n = var_cells.size
    if n == 0:
        raise DegenerateLP("no states carry LP variables")
    if N < 1:
        raise ValueError("the concatenated LP needs a horizon N >= 1")
    U = model.n_actions
    P = _blocks(model, var_cells, var_cells)
    n_vars = (N + 1) * n
    rows, cols, data = [], [], []
    rhs = []
    base = np.arange(n) * U
    for k in range(N):
        r0 = k * n * U
        for u in range(U):
            r = r0 + base + u
            rows.append(r); cols.append(k * n + np.arange(n)); data.append(np.ones(n))
            coo = P[u].tocoo()
            rows.append(r0 + coo.row * U + u)
            cols.append((k + 1) * n + coo.col)
            data.append(-coo.data)
        rhs.append(bonus.reshape(-1))
    m_ineq = N * n * U
    rows.append(m_ineq + np.arange(n)); cols.append(N * n + np.arange(n)); data.append(np.ones(n))
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(m_ineq + n, n_vars)
    ).tocsr()
    A.sum_duplicates()
    sense_row = "<=" if maximise else ">="
    row_sense = np.array([sense_row] * m_ineq + ["="] * n)
    b = np.concatenate(rhs + [np.full(n, float(terminal))])
    cost = np.zeros(n_vars)
    cost[: N * n] = np.tile(c.weights[var_cells], N)
    names = [(k, int(x)) for k in range(N + 1) for x in var_cells]
    return LinearProgram("max" if maximise else "min", cost, A, row_sense, b,
                         np.zeros(n_vars), np.full(n_vars, float(upper)), names, kind)


def _prepare(model, safe, c):
    c = c if c is not None else CMeasure.uniform(model.n_states)
    c.check(safe)
    return c


def build_max_invariance_lp(model: TransitionModel, safe: RegionMask, N: int,
                            c: CMeasure | None = None, upper: float = 1.0) -> LinearProgram:
    """``min sum_{k<N} sum_{x in A} c(x) V_k(x)`` s.t. ``V_k(x) >= sum_{x' in A} T V_{k+1}``, ``V_N = 1``."""
    c = _prepare(model, safe, c)
    cells = safe.indices
    bonus = np.zeros((cells.size, model.n_actions))
    return _chain_lp(model, cells, bonus, 1.0, N, False, c, upper, "max-invariance")


def build_min_invariance_lp(model: TransitionModel, safe: RegionMask, N: int,
                            c: CMeasure | None = None, upper: float = 1.0) -> LinearProgram:
    c = _prepare(model, safe, c)
    cells = safe.indices
    bonus = np.zeros((cells.size, model.n_actions))
    return _chain_lp(model, cells, bonus, 1.0, N, True, c, upper, "min-invariance")


def _target_mass(model, rows_of, target):
    t = target.member.astype(float)
    return model.expect(t)[rows_of]


def build_reach_avoid_lp(model: TransitionModel, safe: RegionMask, target: RegionMask, N: int,
                         c: CMeasure | None = None, upper: float = 1.0) -> LinearProgram:
    """Variables live on ``A \\ T``; the target-hit mass enters each row's right-hand side."""
    if not target.issubset(safe):
        raise ValueError("target set must be a subset of the safe set")
    c = _prepare(model, safe, c)
    live = safe.minus(target).indices
    return _chain_lp(model, live, _target_mass(model, live, target), 0.0, N, False, c, upper, "reach-avoid")


def build_stage_lp(model: TransitionModel, var_cells: np.ndarray, rhs: np.ndarray, maximise: bool,
                   weights: np.ndarray, upper: float = 1.0) -> LinearProgram:
    """One backward step with known next-stage values: ``V(x) >= rhs[x, u]`` for all u
    (``<=`` and maximise for the min problems)."""
    n = var_cells.size
    if n == 0:
        raise DegenerateLP("no states carry LP variables")
    U = model.n_actions
    A = sp.kron(sp.identity(n), np.ones((U, 1))).tocsr()
    row_sense = np.full(n * U, "<=" if maximise else ">=")
    names = [(0, int(x)) for x in var_cells]
    return LinearProgram("max" if maximise else "min", weights[var_cells], A, row_sense,
                         rhs.reshape(-1), np.zeros(n), np.full(n, float(upper)), names)


def build_q_stage_lp(model: TransitionModel, safe: RegionMask, V_next: np.ndarray, sense: str = "max",
                     c_xu: np.ndarray | None = None, upper: float = 1.0) -> LinearProgram:
    """Stagewise state-action program: one variable and one row per ``(x in A, u)``.

    For ``sense="max"`` (maximum invariance) the program minimises
    ``sum c(x,u) Q(x,u)`` s.t. ``Q(x,u) >= sum_{x' in A} T(x'|x,u) V_next(x')``;
    ``sense="min"`` maximises with ``<=`` rows.
    """
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    cells = safe.indices
    if cells.size == 0:
        raise DegenerateLP("no states carry LP variables")
    U = model.n_actions
    a = safe.member.astype(float)
    integral = model.expect(np.asarray(V_next, dtype=float) * a)[cells]
    n = cells.size * U
    if c_xu is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(c_xu, dtype=float)[cells].reshape(-1)
        if np.any(weights <= 0):
            raise ValueError("state-action weights must be strictly positive")
    maximise = sense == "min"
    names = [(0, int(x), u) for x in cells for u in range(U)]
    return LinearProgram("max" if maximise else "min", weights, sp.identity(n, format="csr"),
                         np.full(n, "<=" if maximise else ">="), integral.reshape(-1),
                         np.zeros(n), np.full(n, float(upper)), names)


def pick_method(lp: LinearProgram, method: str) -> str:
    if method != "auto":
        return method
    return "simplex" if lp.n_rows * (lp.n_vars + 2 * lp.n_rows) <= AUTO_DENSE_LIMIT else "highs"


def run(lp: LinearProgram, method: str = "simplex", tol: float = 1e-9) -> SolveReport:
    report = solve(lp, tol=tol, method=pick_method(lp, method))
    if report.status != OPTIMAL:
        raise LPError(report)
    return report


def assemble_value_table(report: SolveReport, lp: LinearProgram, kind: str, n_states: int,
                         target: RegionMask | None = None) -> ValueTable:
    """Scatter an optimal LP solution back into a full table.

    States without variables get 0, except target states of a reach-avoid table,
    which get 1 at every stage.
    """
    if report.status != OPTIMAL:
        raise LPError(report)
    stages = np.array([k for k, _ in lp.names])
    cells = np.array([x for _, x in lp.names])
    N = int(stages.max())
    V = np.zeros((N + 1, n_states))
    V[stages, cells] = np.clip(report.x, 0.0, 1.0)
    if kind == "reach-avoid":
        if target is None:
            raise ValueError("reach-avoid assembly needs the target set")
        V[:, target.member] = 1.0
    return ValueTable(V, kind)


def table_vector(lp: LinearProgram, table: ValueTable) -> np.ndarray:
    """The LP point corresponding to a value table (inverse of assembly)."""
    stages = np.array([k for k, _ in lp.names])
    cells = np.array([x for _, x in lp.names])
    return table.values[stages, cells]


def _trivial(kind, N, n_states, safe, target=None):
    V = np.zeros((N + 1, n_states))
    if kind in ("max-invariance", "min-invariance"):
        V[N] = safe.member
    else:
        V[:, target.member] = 1.0
    return ValueTable(V, kind)


def solve_invariance_lp(model: TransitionModel, safe: RegionMask, N: int, maximise: bool = True,
                        c: CMeasure | None = None, stagewise: bool = False, method: str = "simplex",
                        upper: float = 1.0) -> ValueTable:
    """Max (or min) invariance table obtained from LPs instead of the DP recursion."""
    kind = "max-invariance" if maximise else "min-invariance"
    if N == 0 or not safe.member.any():
        return _trivial(kind, N, model.n_states, safe)
    if not stagewise:
        build = build_max_invariance_lp if maximise else build_min_invariance_lp
        lp = build(model, safe, N, c, upper)
        return assemble_value_table(run(lp, method), lp, kind, model.n_states)
    c = _prepare(model, safe, c)
    a = safe.member.astype(float)
    cells = safe.indices
    V = np.zeros((N + 1, model.n_states))
    V[N] = a
    for k in range(N - 1, -1, -1):
        rhs = model.expect(V[k + 1] * a)[cells]
        lp = build_stage_lp(model, cells, rhs, not maximise, c.weights, upper)
        V[k, cells] = np.clip(run(lp, method).x, 0.0, 1.0)
    return ValueTable(V, kind)


def solve_reach_avoid_lp(model: TransitionModel, safe: RegionMask, target: RegionMask, N: int,
                         c: CMeasure | None = None, stagewise: bool = False, method: str = "simplex",
                         upper: float = 1.0) -> ValueTable:
    if not target.issubset(safe):
        raise ValueError("target set must be a subset of the safe set")
    live_mask = safe.minus(target)
    if N == 0 or not live_mask.member.any():
        return _trivial("reach-avoid", N, model.n_states, safe, target)
    if not stagewise:
        lp = build_reach_avoid_lp(model, safe, target, N, c, upper)
        return assemble_value_table(run(lp, method), lp, "reach-avoid", model.n_states, target)
    c = _prepare(model, safe, c)
    live = live_mask.indices
    g = live_mask.member.astype(float)
    t = target.member.astype(float)
    V = np.zeros((N + 1, model.n_states))
    V[:, target.member] = 1.0
    for k in range(N - 1, -1, -1):
        rhs = model.expect(V[k + 1] * g + t)[live]
        lp = build_stage_lp(model, live, rhs, False, c.weights, upper)
        V[k, live] = np.clip(run(lp, method).x, 0.0, 1.0)
    return ValueTable(V, "reach-avoid")


def solve_q_stagewise(model: TransitionModel, safe: RegionMask, N: int, sense: str = "max",
                      method: str = "simplex"):
    """Chain of stagewise Q programs; returns ``(ValueTable, PolicyTable, QTable)``.

    The stage value is the max over actions of Q for the maximum-invariance sense
    and the min for the minimum-invariance sense; ties go to the lowest action.
    """
    kind = "max-invariance" if sense == "max" else "min-invariance"
    S, U = model.n_states, model.n_actions
    V = np.zeros((N + 1, S))
    V[N] = safe.member
    Q = np.zeros((N, S, U))
    pol = np.zeros((N, S), dtype=np.int64)
    cells = safe.indices
    if cells.size == 0:
        return ValueTable(V, kind), PolicyTable(pol), QTable(Q)
    for k in range(N - 1, -1, -1):
        lp = build_q_stage_lp(model, safe, V[k + 1], sense)
        q = np.clip(run(lp, method).x, 0.0, 1.0).reshape(cells.size, U)
        best = q.argmax(axis=1) if sense == "max" else q.argmin(axis=1)
        Q[k, cells] = q
        V[k, cells] = q[np.arange(cells.size), best]
        pol[k, cells] = best
    return ValueTable(V, kind), PolicyTable(pol), QTable(Q)
