"""Gaussian radial-basis value approximation for reach-avoid, fitted stage by stage.

Each stage solves a small LP over the basis weights; constraints come from sampled
states, sampled inputs and noise draws, with the empirical mean over the draws
standing in for the kernel integral.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import lp as lpmod

MONOTONE_SLACK = 0.05
FEATURE_CHUNK = 8192
# a basis whose bump stays below this at every sampled state gets weight zero
SUPPORT_FLOOR = 1e-12

Predicate = Callable[[np.ndarray], np.ndarray]


@dataclass
class RbfModel:
    centers: np.ndarray  # (n_basis, dim)
    epsilon: float
    weights: np.ndarray  # (N + 1, n_basis); the stage-N row stays zero

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise ValueError("basis centers must be distinct")
        if self.weights.shape[1] != len(self.centers):
            raise ValueError("one weight per basis function and stage")

    @classmethod
    def empty(cls, centers, epsilon: float, horizon: int) -> "RbfModel":
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        return cls(centers, epsilon, np.zeros((horizon + 1, len(centers))))

    @property
    def horizon(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def n_basis(self) -> int:
        return len(self.centers)

    def features(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, self.centers.shape[1])
        c2 = (self.centers ** 2).sum(axis=1)
        out = np.empty((len(p), self.n_basis))
        for lo in range(0, len(p), FEATURE_CHUNK):
            chunk = p[lo:lo + FEATURE_CHUNK]
            d2 = (chunk ** 2).sum(axis=1)[:, None] + c2[None, :] - 2.0 * chunk @ self.centers.T
            out[lo:lo + FEATURE_CHUNK] = np.exp(-(self.epsilon ** 2) * np.maximum(d2, 0.0))
        return out

    def value(self, k: int, points) -> np.ndarray:
        if not 0 <= k <= self.horizon:
            raise IndexError(f"stage {k} outside 0..{self.horizon}")
        return self.features(points) @ self.weights[k]

    def to_json(self) -> str:
        return json.dumps({
            "centers": self.centers.tolist(),
            "epsilon": self.epsilon,
            "weights": self.weights.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "RbfModel":
        d = json.loads(text)
        return cls(np.array(d["centers"]), float(d["epsilon"]), np.array(d["weights"]))


def rbf_eval(model: RbfModel, k: int, x) -> np.ndarray | float:
    """Raw weighted sum of bumps at ``x`` (one point or an array of points); no clamping."""
    x = np.asarray(x, dtype=float)
    vals = model.value(k, x)
    return float(vals[0]) if x.ndim == 1 else vals


def evenly_spaced_centers(lower, upper, per_axis: int) -> np.ndarray:
    """``per_axis`` centers per dimension, each in the middle of an equal slice of the box."""
    if per_axis < 1:
        raise ValueError("need at least one center per axis")
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class ConstraintSample:
    states: np.ndarray   # (n_x, dim)
    inputs: np.ndarray   # (n_x, n_u) action indices
    noise: np.ndarray    # (n_x, n_u, n_w, ...) noise draws
    seed: int | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=np.int64)
        self.noise = np.asarray(self.noise, dtype=float)
        n_x = len(self.states)
        if n_x < 1:
            raise ValueError("constraint sample has no states")
        if self.inputs.ndim != 2 or self.inputs.shape[0] != n_x or self.inputs.shape[1] < 1:
            raise ValueError("inputs must have shape (n_x, n_u) with n_u >= 1")
        if self.noise.shape[:2] != self.inputs.shape or self.noise.ndim < 3 or self.noise.shape[2] < 1:
            raise ValueError("noise must have shape (n_x, n_u, n_w, ...) with n_w >= 1")

    @property
    def n_w(self) -> int:
        return self.noise.shape[2]


def sample_region(rng: np.random.Generator, lower, upper, member: Predicate, n: int,
                  batch: int = 4096, max_rounds: int = 1000) -> np.ndarray:
    """``n`` points uniform over ``{x in box : member(x)}`` by rejection."""
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    got = []
    total = 0
    for _ in range(max_rounds):
        pts = rng.uniform(lower, upper, size=(batch, len(lower)))
        pts = pts[np.asarray(member(pts), dtype=bool)]
        got.append(pts)
        total += len(pts)
        if total >= n:
            return np.concatenate(got)[:n]
    raise ValueError("region too small to sample by rejection")


def draw_constraint_sample(seed, lower, upper, member: Predicate, n_actions: int, n_x: int, n_u: int, n_w: int,
                           noise: Callable[[np.random.Generator, tuple], np.ndarray]) -> ConstraintSample:
    """States uniform over ``member``; inputs uniform without replacement (all when ``n_u >= n_actions``)."""
    if min(n_x, n_u, n_w) < 1:
        raise ValueError("sample counts must be >= 1")
    rng = np.random.default_rng(seed)
    states = sample_region(rng, lower, upper, member, n_x)
    if n_u >= n_actions:
        inputs = np.tile(np.arange(n_actions), (n_x, 1))
    else:
        inputs = np.argsort(rng.random((n_x, n_actions)), axis=1)[:, :n_u]
    draws = noise(rng, (n_x, inputs.shape[1], n_w))
    key = seed if isinstance(seed, (int, np.integer)) else None
    return ConstraintSample(states, inputs, draws, key)


def reach_avoid_next(V_next: Callable[[np.ndarray], np.ndarray], safe: Predicate, target: Predicate):
    """Wrap a raw next-stage approximant: 1 on the target, 0 off the safe set, clamped elsewhere."""

    def value(points):
        v = np.clip(V_next(points), 0.0, 1.0)
        v = np.where(np.asarray(safe(points), dtype=bool), v, 0.0)
        return np.where(np.asarray(target(points), dtype=bool), 1.0, v)

    return value


def constraint_rhs(dynamics, actions: np.ndarray, V_hat: Callable, sample: ConstraintSample,
                   workers: int = 1) -> np.ndarray:
    """Empirical mean of ``V_hat(dynamics(x, u, w))`` over the draws, shape ``(n_x, n_u)``."""
    n_x, n_u = sample.inputs.shape
    n_w = sample.n_w
    acts = np.asarray(actions, dtype=float)
    if acts.ndim == 1:
        acts = acts[:, None]

    def block(lo, hi):
        x = np.repeat(sample.states[lo:hi], n_u * n_w, axis=0)
        u = np.repeat(acts[sample.inputs[lo:hi].ravel()], n_w, axis=0)
        w = sample.noise[lo:hi].reshape((hi - lo) * n_u * n_w, *sample.noise.shape[3:])
        vals = V_hat(dynamics(x, u, w))
        return vals.reshape(hi - lo, n_u, n_w).mean(axis=2)

    step = max(1, 4096 // max(1, n_u * n_w))
    bounds = [(lo, min(lo + step, n_x)) for lo in range(0, n_x, step)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: block(*b), bounds))
    else:
        parts = [block(*b) for b in bounds]
    return np.concatenate(parts)


def stage_lp(phi: np.ndarray, rhs: np.ndarray, c: np.ndarray | None = None) -> lpmod.LinearProgram:
    """``min sum_x c(x) phi(x) w  s.t.  phi(x) w >= rhs(x, u)``; weights are free."""
    n_x, n_b = phi.shape
    n_u = rhs.shape[1]
    c = np.full(n_x, 1.0 / n_x) if c is None else np.asarray(c, dtype=float)
    if c.shape != (n_x,) or np.any(c <= 0):
        raise ValueError("state weights must be positive, one per sampled state")
    A = sp.csr_matrix(np.repeat(phi, n_u, axis=0))
    return lpmod.LinearProgram(
        "min", c @ phi, A, np.full(n_x * n_u, ">="), rhs.ravel(),
        np.full(n_b, -np.inf), np.full(n_b, np.inf), kind="rbf-stage",
    )


def fit_stage_reach_avoid(dynamics, safe: Predicate, target: Predicate, rbf: RbfModel,
                          V_next: Callable[[np.ndarray], np.ndarray], sample: ConstraintSample,
                          actions: np.ndarray, c: np.ndarray | None = None, method: str = "highs",
                          workers: int = 1) -> np.ndarray:
    """Weights of one stage.  ``V_next`` is the raw next-stage approximant; the
    reach-avoid boundary rules are applied here before averaging."""
    rhs = constraint_rhs(dynamics, actions, reach_avoid_next(V_next, safe, target), sample, workers)
    phi = rbf.features(sample.states)
    active = phi.max(axis=0) > SUPPORT_FLOOR
    weights = np.zeros(rbf.n_basis)
    weights[active] = lpmod.run(stage_lp(phi[:, active], rhs, c), method).x
    return weights


@dataclass
class FitReport:
    """Per stage: how far the clamped values fall below the next stage's at the sampled states."""

    worst_drop: list[float] = field(default_factory=list)   # index k
    violations: list[int] = field(default_factory=list)     # count beyond MONOTONE_SLACK
    slack: float = MONOTONE_SLACK

    @property
    def ok(self) -> bool:
        return not any(self.violations)


def backward_fit(dynamics, safe: Predicate, target: Predicate, centers, epsilon: float, actions, N: int,
                 lower, upper, n_x: int, n_u: int, n_w: int, noise, seed: int, resample: bool = True,
                 method: str = "highs", workers: int = 1) -> tuple[RbfModel, FitReport]:
    """Fit stages ``N - 1`` down to ``0``.

    Stage N is the boundary function (0 on the live set, 1 on the target, 0
    off the safe set), represented by zero weights plus the boundary wrapper.
    Stage k draws its sample with seed ``[seed, k]`` (or ``[seed, 0]`` for
    every stage when ``resample`` is false).
    """
    actions = np.asarray(actions, dtype=float)
    model = RbfModel.empty(centers, epsilon, N)
    report = FitReport([0.0] * N, [0] * N)

    def live(p):
        return np.asarray(safe(p), dtype=bool) & ~np.asarray(target(p), dtype=bool)

    fixed = None
    if not resample:
        fixed = draw_constraint_sample([seed, 0], lower, upper, live, len(actions), n_x, n_u, n_w, noise)
    for k in range(N - 1, -1, -1):
        sample = fixed or draw_constraint_sample([seed, k], lower, upper, live, len(actions), n_x, n_u, n_w, noise)
        nxt = k + 1
        model.weights[k] = fit_stage_reach_avoid(
            dynamics, safe, target, model, lambda p, j=nxt: model.value(j, p), sample, actions,
            method=method, workers=workers,
        )
        now = np.clip(model.value(k, sample.states), 0.0, 1.0)
        later = np.clip(model.value(nxt, sample.states), 0.0, 1.0) if nxt < N else np.zeros(len(now))
        drop = later - now
        report.worst_drop[k] = float(max(drop.max(), 0.0))
        report.violations[k] = int(np.sum(drop > MONOTONE_SLACK))
    return model, report


def rbf_evaluator(model: RbfModel, safe: Predicate, target: Predicate):
    """Stage evaluator for error studies: clamped approximant, 0 off the safe set, 1 on the target."""

    def evaluate(k, points):
        return reach_avoid_next(lambda p: model.value(k, p), safe, target)(points)

    evaluate.horizon = model.horizon
    return evaluate


def desk_settings(per_axis: int, n_actions: int, side: float = 50.0) -> dict:
    """Basis width and sample counts scaled from the 15-per-axis setup (800 states, 30 inputs, 15 draws)."""
    return {
        "epsilon": per_axis / side,
        "n_x": max(1, round(800 * (per_axis / 15) ** 2)),
        "n_u": min(30, n_actions),
        "n_w": 15,
    }


def write_eval_grid_csv(path, model: RbfModel, points: np.ndarray, evaluate=None) -> None:
    """Columns: stage, x0.., value; ``evaluate`` defaults to the raw approximant."""
    points = np.asarray(points, dtype=float)
    dim = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage"] + [f"x{d}" for d in range(dim)] + ["value"])
        for k in range(model.horizon + 1):
            vals = evaluate(k, points) if evaluate else model.value(k, points)
            for p, v in zip(points, vals):
                w.writerow([k, *(repr(float(c)) for c in p), repr(float(v))])
