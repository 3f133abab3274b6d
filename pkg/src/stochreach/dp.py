"""Exact backward dynamic programming on a finite model.

All recursions use the form restricted to the safe set: values off ``A`` are zero
and the one-step expectation only integrates over ``A`` (reach-avoid additionally
counts landing in the target as value one).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .model import RegionMask, StateGrid, TransitionModel

KINDS = ("max-invariance", "min-invariance", "max-reach", "min-reach", "reach-avoid", "policy-eval")
CHECK_TOL = 1e-12


@dataclass(frozen=True)
class ValueTable:
    values: np.ndarray  # (N + 1, n_states)
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown value table kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("values must have shape (N + 1, n_states)")
        object.__setattr__(self, "values", vals)

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def stage(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.horizon:
            raise IndexError(f"stage {k} outside 0..{self.horizon}")
        return self.values[k]

    def to_csv(self, path, grid: StateGrid | None = None) -> None:
        write_table_csv(path, self.values, grid)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ValueTable":
        data = json.loads(text)
        return cls(np.array(data["values"], dtype=float), data["kind"])

    @classmethod
    def from_csv(cls, path, kind: str) -> "ValueTable":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        stages = rows[:, 0].astype(int)
        cells = rows[:, 1].astype(int)
        vals = np.zeros((stages.max() + 1, cells.max() + 1))
        vals[stages, cells] = rows[:, -1]
        return cls(vals, kind)


@dataclass(frozen=True)
class QTable:
    values: np.ndarray  # (N, n_states, n_actions)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "cell", "action", "value"])
            n_stages, n_states, n_actions = self.values.shape
            for k in range(n_stages):
                for x in range(n_states):
                    for u in range(n_actions):
                        w.writerow([k, x, u, repr(float(self.values[k, x, u]))])


@dataclass(frozen=True)
class PolicyTable:
    actions: np.ndarray  # (N, n_states) of action indices

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "cell", "action"])
            for k, row in enumerate(self.actions):
                for x, u in enumerate(row):
                    w.writerow([k, x, int(u)])


def write_table_csv(path, values: np.ndarray, grid: StateGrid | None = None) -> None:
    """Columns: stage, cell, one multi-index column per grid axis, value.

    The out-of-domain state is written with multi-index -1 on every axis.
    """
    n_stages, n_states = values.shape
    if grid is not None:
        multi = np.full((n_states, grid.ndim), -1, dtype=np.int64)
        multi[: grid.n_cells] = np.stack(grid.multi_index(np.arange(grid.n_cells)), axis=-1)
        header = ["stage", "cell"] + [f"i{d}" for d in range(grid.ndim)] + ["value"]
    else:
        multi = np.zeros((n_states, 0), dtype=np.int64)
        header = ["stage", "cell", "value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(n_stages):
            for x in range(n_states):
                w.writerow([k, x, *multi[x].tolist(), repr(float(values[k, x]))])


def _check_model(model: TransitionModel, *masks: RegionMask) -> None:
    for m in masks:
        if len(m) != model.n_states:
            raise ValueError(f"mask {m.name!r} has {len(m)} entries, model has {model.n_states} states")


def _optimise(q: np.ndarray, maximise: bool) -> tuple[np.ndarray, np.ndarray]:
    # argmax/argmin return the first optimum, i.e. ties go to the lowest action index
    if maximise:
        best = q.argmax(axis=1)
    else:
        best = q.argmin(axis=1)
    return q[np.arange(q.shape[0]), best], best


def _invariance(model: TransitionModel, safe: RegionMask, N: int, maximise: bool, kind: str):
    if N < 0:
        raise ValueError("horizon must be >= 0")
    _check_model(model, safe)
    a = safe.member.astype(float)
    S, U = model.n_states, model.n_actions
    V = np.zeros((N + 1, S))
    Q = np.zeros((N, S, U))
    pol = np.zeros((N, S), dtype=np.int64)
    V[N] = a
    for k in range(N - 1, -1, -1):
        q = model.expect(V[k + 1] * a) * a[:, None]
        best, arg = _optimise(q, maximise)
        Q[k] = q
        V[k] = np.clip(best, 0.0, 1.0) * a
        pol[k] = np.where(safe.member, arg, 0)
    return ValueTable(V, kind), PolicyTable(pol), QTable(Q)


def max_invariance(model: TransitionModel, safe: RegionMask, N: int):
    """Best achievable probability of staying in ``safe`` for stages k..N.

    Returns ``(ValueTable, PolicyTable, QTable)``; the policy is the argmax with
    ties resolved to the lowest action index.
    """
    return _invariance(model, safe, N, True, "max-invariance")


def min_invariance(model: TransitionModel, safe: RegionMask, N: int):
    """Worst-case counterpart of :func:`max_invariance` (min / argmin)."""
    return _invariance(model, safe, N, False, "min-invariance")


def evaluate_policy(model: TransitionModel, safe: RegionMask, policy: PolicyTable, N: int) -> ValueTable:
    """Probability that the trajectory under ``policy`` stays in ``safe`` up to stage N.

    Uses the unrestricted recursion with the indicator prefactor,
    ``V_k(x) = 1_A(x) * sum_x' V_{k+1}(x') T(x'|x, mu_k(x))``.
    """
    _check_model(model, safe)
    acts = policy.actions
    if acts.shape != (N, model.n_states):
        raise ValueError(f"policy has shape {acts.shape}, expected {(N, model.n_states)}")
    if acts.size and (acts.min() < 0 or acts.max() >= model.n_actions):
        raise ValueError("policy refers to an unknown action")
    a = safe.member.astype(float)
    V = np.zeros((N + 1, model.n_states))
    V[N] = a
    rows = np.arange(model.n_states)
    for k in range(N - 1, -1, -1):
        V[k] = a * model.expect(V[k + 1])[rows, acts[k]]
    return ValueTable(np.clip(V, 0.0, 1.0), "policy-eval")


def max_reachability(model: TransitionModel, target: RegionMask, N: int) -> ValueTable:
    """Best probability of visiting ``target`` at some stage in k..N, as one minus
    the minimum invariance of the target's complement."""
    inv, _, _ = min_invariance(model, target.complement(), N)
    return ValueTable(1.0 - inv.values, "max-reach")


def min_reachability(model: TransitionModel, target: RegionMask, N: int) -> ValueTable:
    inv, _, _ = max_invariance(model, target.complement(), N)
    return ValueTable(1.0 - inv.values, "min-reach")


def reach_avoid_q(model: TransitionModel, safe: RegionMask, target: RegionMask, N: int):
    """Reach-avoid DP returning ``(ValueTable, PolicyTable, QTable)``."""
    if N < 0:
        raise ValueError("horizon must be >= 0")
    _check_model(model, safe, target)
    if not target.issubset(safe):
        raise ValueError("target set must be a subset of the safe set")
    t = target.member.astype(float)
    live = safe.member & ~target.member
    g = live.astype(float)
    S, U = model.n_states, model.n_actions
    V = np.zeros((N + 1, S))
    Q = np.zeros((N, S, U))
    pol = np.zeros((N, S), dtype=np.int64)
    V[N] = t
    for k in range(N - 1, -1, -1):
        q = model.expect(V[k + 1] * g + t) * g[:, None]
        best, arg = _optimise(q, True)
        Q[k] = q
        V[k] = np.clip(best, 0.0, 1.0) * g + t
        pol[k] = np.where(live, arg, 0)
    return ValueTable(V, "reach-avoid"), PolicyTable(pol), QTable(Q)


def reach_avoid(model: TransitionModel, safe: RegionMask, target: RegionMask, N: int):
    """Maximum probability of reaching ``target`` before leaving ``safe``.

    Value one on the target, zero outside the safe set, at every stage.
    """
    V, pol, _ = reach_avoid_q(model, safe, target, N)
    return V, pol


def level_set(table: ValueTable, stage: int, p: float, name: str = "") -> RegionMask:
    """States whose stage value is at least ``p``."""
    return RegionMask(table.stage(stage) >= p, name or f"{table.kind} >= {p}")


def validate_table(
    table: ValueTable, region: RegionMask, target: RegionMask | None = None, tol: float = CHECK_TOL
) -> list[str]:
    """Structural checks on a value table; returns a list of violations (empty when fine).

    ``region`` is the safe set for invariance, policy evaluation and reach-avoid,
    and the target set for the reachability kinds.
    """
    V = table.values
    N = table.horizon
    inside = region.member
    problems = []
    if V.min() < 0.0 or V.max() > 1.0:
        problems.append(f"values leave [0, 1]: min {V.min()!r}, max {V.max()!r}")
    if table.kind in ("max-invariance", "min-invariance", "policy-eval"):
        if np.any(V[:, ~inside] != 0.0):
            problems.append("nonzero value outside the safe set")
        if np.any(V[N] != inside.astype(float)):
            problems.append("terminal stage differs from the safe-set indicator")
        if table.kind != "policy-eval":
            worst = np.max(V[:-1] - V[1:], initial=0.0)
            if worst > tol:
                problems.append(f"V_k <= V_k+1 violated by {worst:.3g}")
    elif table.kind in ("max-reach", "min-reach"):
        if np.any(V[:, inside] != 1.0):
            problems.append("value on the target differs from one")
        if np.any(V[N] != inside.astype(float)):
            problems.append("terminal stage differs from the target indicator")
        worst = np.max(V[1:] - V[:-1], initial=0.0)
        if worst > tol:
            problems.append(f"V_k >= V_k+1 violated by {worst:.3g}")
    elif table.kind == "reach-avoid":
        if target is None:
            raise ValueError("reach-avoid validation needs the target set")
        if np.any(V[:, target.member] != 1.0):
            problems.append("value on the target differs from one")
        if np.any(V[:, ~inside] != 0.0):
            problems.append("nonzero value outside the safe set")
        live = inside & ~target.member
        if np.any(V[N, live] != 0.0):
            problems.append("terminal value on safe non-target states is not zero")
        worst = np.max(V[1:] - V[:-1], initial=0.0)
        if worst > tol:
            problems.append(f"V_k >= V_k+1 violated by {worst:.3g}")
    return problems
