"""Robot-in-a-room benchmark: heading control with Gaussian heading noise and a fixed 3 m step.

The room is ``[0, 50] x [0, 50]`` m with interior walls (unsafe) and a target in
the top-left corner.  The wall coordinates are an approximation of a drawn layout;
they are plain data and can be replaced through the JSON config.
"""
from __future__ import annotations

import json
import math
import re
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import dp
from .model import ActionSet, RegionMask, StateGrid, TransitionModel, estimate_kernel, mask_from_predicate

Rect = tuple[float, float, float, float]  # (x_lo, x_hi, y_lo, y_hi)

DEFAULT_WALLS: tuple[Rect, ...] = (
    (12.0, 16.0, 0.0, 24.0),   # lower left
    (34.0, 38.0, 0.0, 24.0),   # lower right
    (18.0, 50.0, 32.0, 36.0),  # upper, attached to the right-hand side
)
DEFAULT_TARGET: Rect = (0.0, 6.0, 44.0, 50.0)


def robot_dynamics(x, u, w, step: float = 3.0) -> np.ndarray:
    """``(x, y) + step * (sin(u + w), cos(u + w))``; heading 0 points along +y."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(u, dtype=float) + np.asarray(w, dtype=float)
    return np.stack([x[..., 0] + step * np.sin(theta), x[..., 1] + step * np.cos(theta)], axis=-1)


def _in_rect(points: np.ndarray, r: Rect) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return (p[:, 0] >= r[0]) & (p[:, 0] <= r[1]) & (p[:, 1] >= r[2]) & (p[:, 1] <= r[3])


@dataclass(frozen=True)
class RobotScenario:
    step: float = 3.0
    noise: float = math.pi / 5
    noise_kind: str = "std"  # "std" or "var" for the heading noise parameter
    room: Rect = (0.0, 50.0, 0.0, 50.0)
    walls: tuple[Rect, ...] = DEFAULT_WALLS
    target: Rect = DEFAULT_TARGET
    grid: int = 50
    n_actions: int = 18
    horizon: int = 100
    samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "room", tuple(float(v) for v in self.room))
        object.__setattr__(self, "walls", tuple(tuple(float(v) for v in w) for w in self.walls))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        if self.noise_kind not in ("std", "var"):
            raise ValueError("noise_kind must be 'std' or 'var'")
        if self.noise < 0:
            raise ValueError("noise parameter must be non-negative")
        if self.grid < 1 or self.n_actions < 1 or self.horizon < 0 or self.samples < 1:
            raise ValueError("grid, n_actions and samples must be >= 1 and horizon >= 0")
        x0, x1, y0, y1 = self.room
        if x1 <= x0 or y1 <= y0:
            raise ValueError("room must have positive extent")
        t = self.target
        if not (x0 <= t[0] < t[1] <= x1 and y0 <= t[2] < t[3] <= y1):
            raise ValueError("target must lie inside the room")
        for w in self.walls:
            if t[0] < w[1] and w[0] < t[1] and t[2] < w[3] and w[2] < t[3]:
                raise ValueError(f"target overlaps wall {w}")

    @property
    def noise_std(self) -> float:
        return self.noise if self.noise_kind == "std" else math.sqrt(self.noise)

    @classmethod
    def from_dict(cls, data: dict) -> "RobotScenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RobotScenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room"] = list(self.room)
        d["walls"] = [list(w) for w in self.walls]
        d["target"] = list(self.target)
        return d

    def with_(self, **changes) -> "RobotScenario":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def state_grid(self, cells: int | None = None) -> StateGrid:
        g = cells or self.grid
        x0, x1, y0, y1 = self.room
        return StateGrid((g, g), (x0, y0), (x1, y1))

    def action_set(self) -> ActionSet:
        # headings 2*pi*i/n for i = 1..n, i.e. the interval (0, 2*pi]
        return ActionSet(2 * np.pi * np.arange(1, self.n_actions + 1) / self.n_actions)

    def noise_sampler(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.normal(0.0, self.noise_std, shape)

    def dynamics(self, x, u, w) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 2:
            u = u[:, 0]
        return robot_dynamics(x, u, w, self.step)

    def safe_predicate(self, points) -> np.ndarray:
        inside = _in_rect(points, self.room)
        for w in self.walls:
            inside &= ~_in_rect(points, w)
        return inside

    def target_predicate(self, points) -> np.ndarray:
        return _in_rect(points, self.target)


def build_robot_model(scn: RobotScenario, samples_per_pair: int | None = None, seed: int | None = None,
                      cells: int | None = None, workers: int = 1):
    """Gridded kernel plus safe and target masks: ``(TransitionModel, safe, target)``.

    Wall cells and the out-of-domain state are excluded from the safe set.
    """
    grid = scn.state_grid(cells)
    model = estimate_kernel(
        scn.dynamics, grid, scn.action_set(), samples_per_pair or scn.samples,
        scn.seed if seed is None else seed, scn.noise_sampler, workers=workers,
    )
    safe = mask_from_predicate(grid, scn.safe_predicate, "A")
    target = mask_from_predicate(grid, scn.target_predicate, "T")
    return model, safe, target


def grid_reach_avoid(scn: RobotScenario, cells: int, horizon: int | None = None, samples: int | None = None,
                     seed: int | None = None, workers: int = 1):
    """Kernel estimation followed by reach-avoid DP; returns ``(model, safe, target, table, policy)``."""
    model, safe, target = build_robot_model(scn, samples, seed, cells, workers)
    N = scn.horizon if horizon is None else horizon
    table, policy = dp.reach_avoid(model, safe, target, N)
    return model, safe, target, table, policy


def write_masks_csv(path, grid: StateGrid, safe: RegionMask, target: RegionMask) -> None:
    """One row per real cell: multi-index, center and mask bits (for map plots)."""
    import csv

    centers = grid.cell_centers
    multi = np.stack(grid.multi_index(np.arange(grid.n_cells)), axis=-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "i0", "i1", "x", "y", "safe", "target"])
        for i in range(grid.n_cells):
            w.writerow([i, int(multi[i, 0]), int(multi[i, 1]), repr(float(centers[i, 0])),
                        repr(float(centers[i, 1])), int(safe.member[i]), int(target.member[i])])


# -- named methods ("grid25", "rbf5", ...) shared by the CLI and the benchmark scripts

def derive_seed(seed: int, label: str) -> int:
    """Deterministic sub-seed for one pipeline component."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]).generate_state(1)[0])


def parse_method(name: str) -> tuple[str, int]:
    m = re.fullmatch(r"(grid|rbf)(\d+)", name.strip().lower())
    if not m or int(m.group(2)) < 1:
        raise ValueError(f"method must look like grid<N> or rbf<N>, got {name!r}")
    return m.group(1), int(m.group(2))


@dataclass
class MethodRun:
    name: str
    evaluator: Callable
    table: dp.ValueTable | None = None
    model: TransitionModel | None = None
    safe: RegionMask | None = None
    target: RegionMask | None = None
    rbf_model: object = None
    fit_report: object = None
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


def run_method(scn: RobotScenario, name: str, horizon: int, seed: int, workers: int = 1,
               rbf_overrides: dict | None = None) -> MethodRun:
    """Solve reach-avoid with one named method and return a stage evaluator for error studies."""
    from . import rbf
    from .harness import grid_evaluator

    kind, n = parse_method(name)
    t0 = time.perf_counter()
    if kind == "grid":
        model, safe, target, table, _ = grid_reach_avoid(
            scn, n, horizon, scn.samples, derive_seed(seed, f"kernel/grid{n}"), workers)
        run = MethodRun(name, grid_evaluator(model.grid, table), table, model, safe, target)
    else:
        settings = rbf.desk_settings(n, scn.n_actions, scn.room[1] - scn.room[0])
        settings.update({k: v for k, v in (rbf_overrides or {}).items() if v is not None})
        lower, upper = (scn.room[0], scn.room[2]), (scn.room[1], scn.room[3])
        fitted, report = rbf.backward_fit(
            scn.dynamics, scn.safe_predicate, scn.target_predicate,
            rbf.evenly_spaced_centers(lower, upper, n), settings["epsilon"], scn.action_set().actions[:, 0],
            horizon, lower, upper, settings["n_x"], settings["n_u"], settings["n_w"], scn.noise_sampler,
            derive_seed(seed, f"rbf{n}"), workers=workers,
        )
        run = MethodRun(name, rbf.rbf_evaluator(fitted, scn.safe_predicate, scn.target_predicate),
                        rbf_model=fitted, fit_report=report, extra=settings)
    run.seconds = time.perf_counter() - t0
    return run
