"""Dense bounded-variable primal simplex with Bland's anti-cycling rule.

Intended for the desk-scale programs produced by :mod:`stochreach.lp`.  Larger
programs can be routed to HiGHS through ``solve(..., method="highs")``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from .lp import LinearProgram

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL = "numerical-error"

PIVOT_TOL = 1e-9


@dataclass
class SolveReport:
    status: str
    objective: float | None
    x: np.ndarray | None
    iterations: int
    message: str = ""

    def __post_init__(self):
        if (self.x is not None) != (self.status == OPTIMAL):
            raise ValueError("a primal solution is reported iff the status is optimal")

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Standard:
    """``min cost @ y  s.t.  A y = b,  0 <= y <= ub`` plus the map back to the user's variables."""

    def __init__(self, lp: "LinearProgram"):
        A = lp.A.toarray() if sp.issparse(lp.A) else np.asarray(lp.A, dtype=float)
        m, n = A.shape
        c = np.asarray(lp.cost, dtype=float) * (-1.0 if lp.sense == "max" else 1.0)
        b = np.asarray(lp.rhs, dtype=float).copy()
        lo = np.asarray(lp.lower, dtype=float)
        hi = np.asarray(lp.upper, dtype=float)
        self.bad_bounds = bool(np.any(hi < lo))

        cols, costs, ubs = [], [], []
        # recover[j] = list of (internal column, sign); x_j = offset_j + sum sign * y
        self.recover: list[list[tuple[int, float]]] = []
        self.offset = np.zeros(n)
        self.const = 0.0
        for j in range(n):
            a = A[:, j]
            if np.isfinite(lo[j]):
                b -= a * lo[j]
                self.const += c[j] * lo[j]
                self.offset[j] = lo[j]
                self.recover.append([(len(cols), 1.0)])
                cols.append(a); costs.append(c[j]); ubs.append(hi[j] - lo[j])
            elif np.isfinite(hi[j]):
                b -= a * hi[j]
                self.const += c[j] * hi[j]
                self.offset[j] = hi[j]
                self.recover.append([(len(cols), -1.0)])
                cols.append(-a); costs.append(-c[j]); ubs.append(np.inf)
            else:
                self.recover.append([(len(cols), 1.0), (len(cols) + 1, -1.0)])
                cols += [a, -a]; costs += [c[j], -c[j]]; ubs += [np.inf, np.inf]
        self.n_struct = len(cols)

        senses = list(lp.row_sense)
        slack_of_row = {}
        for i, s in enumerate(senses):
            if s == "=":
                continue
            col = np.zeros(m)
            col[i] = 1.0 if s == "<=" else -1.0
            slack_of_row[i] = len(cols)
            cols.append(col); costs.append(0.0); ubs.append(np.inf)

        basis, signs, art_rows = [], [], []
        for i in range(m):
            k = slack_of_row.get(i)
            if k is not None and cols[k][i] * b[i] >= 0.0:
                basis.append(k)
                signs.append(cols[k][i])
            else:
                art_rows.append(i)
                basis.append(-1)
                signs.append(1.0 if b[i] >= 0 else -1.0)
        self.first_art = len(cols)
        for i in art_rows:
            col = np.zeros(m)
            col[i] = signs[i]
            basis[i] = len(cols)
            cols.append(col); costs.append(0.0); ubs.append(np.inf)

        self.A = np.column_stack(cols) if cols else np.zeros((m, 0))
        self.b = b
        self.cost = np.array(costs)
        self.ub = np.array(ubs)
        self.basis = np.array(basis, dtype=np.int64)
        self.signs = np.array(signs)

    def to_user(self, y: np.ndarray) -> np.ndarray:
        x = self.offset.copy()
        for j, parts in enumerate(self.recover):
            for k, s in parts:
                x[j] += s * y[k]
        return x


class _Tableau:
    """Dense tableau ``B^-1 A`` with basic values; nonbasic columns sit at 0 or at their upper bound."""

    REFACTOR_EVERY = 40
    HARRIS_DELTA = 1e-9

    def __init__(self, std: _Standard):
        self.std = std
        self.T = std.A * std.signs[:, None]
        self.xb = std.b * std.signs
        self.basis = std.basis.copy()
        self.at_upper = np.zeros(std.A.shape[1], dtype=bool)
        self.ub = std.ub.copy()
        self.iterations = 0

    def nonbasic_values(self) -> np.ndarray:
        y = np.where(self.at_upper, self.ub, 0.0)
        y[self.basis] = 0.0
        return y

    def refactor(self) -> bool:
        A, b = self.std.A, self.std.b
        if not A.shape[0]:
            return True
        B = A[:, self.basis]
        try:
            self.T = np.linalg.solve(B, A)
            self.xb = np.linalg.solve(B, b - A @ self.nonbasic_values())
        except np.linalg.LinAlgError:
            return False
        return bool(np.all(np.isfinite(self.T)))

    def run(self, cost: np.ndarray, allowed: np.ndarray, tol: float, max_iters: int) -> str:
        T, basis, ub = self.T, self.basis, self.ub
        m, ncol = T.shape
        rows = np.arange(m)
        degenerate = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iters:
                return ITERATION_LIMIT
            if since_refactor >= self.REFACTOR_EVERY:
                if not self.refactor():
                    return NUMERICAL
                T = self.T
                since_refactor = 0
            xb, at_upper = self.xb, self.at_upper
            d = cost - cost[basis] @ T
            nonbasic = np.ones(ncol, dtype=bool)
            nonbasic[basis] = False
            eligible = nonbasic & allowed & (ub > 0) & (
                (~at_upper & (d < -tol)) | (at_upper & (d > tol))
            )
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                return OPTIMAL
            j = cand[0]  # Bland: lowest eligible index enters
            direction = -1.0 if at_upper[j] else 1.0
            rate = -direction * T[:, j]

            dec = rate < -PIVOT_TOL
            inc = (rate > PIVOT_TOL) & np.isfinite(ub[basis])
            room = np.full(m, np.inf)
            room[dec] = np.maximum(xb[dec], 0.0)
            room[inc] = np.maximum(ub[basis][inc] - xb[inc], 0.0)
            mag = np.abs(rate)
            blocking = dec | inc
            t_flip = ub[j]
            if not blocking.any() and not np.isfinite(t_flip):
                return UNBOUNDED
            self.iterations += 1
            since_refactor += 1
            if blocking.any():
                ratios = np.full(m, np.inf)
                ratios[blocking] = room[blocking] / mag[blocking]
                if degenerate < 20 * max(m, 1):
                    # Harris pass: largest pivot among rows blocking within a small relaxation
                    relaxed = np.full(m, np.inf)
                    relaxed[blocking] = (room[blocking] + self.HARRIS_DELTA) / mag[blocking]
                    ties = rows[blocking & (ratios <= relaxed.min())]
                    best = mag[ties].max()
                    ties = ties[mag[ties] == best]
                else:
                    # long degenerate streak: strict Bland leaving rule guarantees termination
                    t_min = ratios.min()
                    ties = rows[ratios <= t_min]
                r = ties[np.argmin(basis[ties])]
                t_row = ratios[r]
            else:
                r, t_row = -1, np.inf
            if t_flip <= t_row:
                self.xb = xb + rate * t_flip
                at_upper[j] = not at_upper[j]
                degenerate = 0
                continue
            degenerate = degenerate + 1 if t_row == 0.0 else 0
            leaving = basis[r]
            xb += rate * t_row
            at_upper[leaving] = rate[r] > 0
            entering_value = ub[j] - t_row if at_upper[j] else t_row
            at_upper[j] = False
            T[r] /= T[r, j]
            col = T[:, j].copy()
            col[r] = 0.0
            T -= np.outer(col, T[r])
            basis[r] = j
            xb[r] = entering_value


def solve(lp: "LinearProgram", tol: float = 1e-9, max_iters: int = 50_000, method: str = "simplex") -> SolveReport:
    """Solve ``lp``.  ``method`` is ``"simplex"`` (the dense solver here) or ``"highs"``."""
    if method == "highs":
        return _solve_highs(lp, tol)
    if method != "simplex":
        raise ValueError(f"unknown LP method {method!r}")
    std = _Standard(lp)
    if std.bad_bounds:
        return SolveReport(INFEASIBLE, None, None, 0, "a lower bound exceeds its upper bound")
    m, ncol = std.A.shape
    tab = _Tableau(std)
    structural = np.arange(ncol) < std.first_art
    scale = max(1.0, float(np.abs(std.b).max(initial=0.0)))

    if ncol > std.first_art:
        phase1 = (~structural).astype(float)
        status = tab.run(phase1, np.ones(ncol, bool), tol, max_iters)
        if status != OPTIMAL:
            return SolveReport(status if status == ITERATION_LIMIT else NUMERICAL, None, None,
                               tab.iterations, "phase one did not terminate")
        if not tab.refactor():
            return SolveReport(NUMERICAL, None, None, tab.iterations, "singular basis after phase one")
        infeas = float(phase1[tab.basis] @ tab.xb)
        if infeas > tol * scale:
            return SolveReport(INFEASIBLE, None, None, tab.iterations, f"phase one residual {infeas:.3g}")
        tab.ub[~structural] = 0.0
        tab.xb[~structural[tab.basis]] = 0.0

    status = tab.run(std.cost, structural, tol, max_iters)
    if status != OPTIMAL:
        return SolveReport(status, None, None, tab.iterations)
    # recompute the basic solution from the final basis to shed accumulated pivot error
    if not tab.refactor():
        return SolveReport(NUMERICAL, None, None, tab.iterations, "singular final basis")
    y = tab.nonbasic_values()
    y[tab.basis] = tab.xb
    x = std.to_user(y)
    obj = float(np.asarray(lp.cost, dtype=float) @ x)
    return SolveReport(OPTIMAL, obj, x, tab.iterations)


def _solve_highs(lp: "LinearProgram", tol: float) -> SolveReport:
    from scipy.optimize import linprog

    A = sp.csr_matrix(lp.A)
    senses = np.asarray(lp.row_sense)
    rhs = np.asarray(lp.rhs, dtype=float)
    le, ge, eq = senses == "<=", senses == ">=", senses == "="
    A_ub = sp.vstack([A[np.flatnonzero(le)], -A[np.flatnonzero(ge)]]).tocsr()
    b_ub = np.concatenate([rhs[le], -rhs[ge]])
    c = np.asarray(lp.cost, dtype=float) * (-1.0 if lp.sense == "max" else 1.0)
    bounds = [
        (None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
        for lo, hi in zip(lp.lower, lp.upper)
    ]
    res = linprog(
        c,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A[np.flatnonzero(eq)] if eq.any() else None,
        b_eq=rhs[eq] if eq.any() else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": max(tol, 1e-10), "dual_feasibility_tolerance": max(tol, 1e-10)},
    )
    status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, NUMERICAL)
    if status != OPTIMAL:
        return SolveReport(status, None, None, int(getattr(res, "nit", 0)), res.message)
    x = np.asarray(res.x, dtype=float)
    return SolveReport(OPTIMAL, float(np.asarray(lp.cost, dtype=float) @ x), x, int(res.nit), res.message)
