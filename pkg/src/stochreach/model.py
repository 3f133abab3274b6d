"""Finite stochastic systems: state grids, action sets, transition kernels and region masks.

The kernel is stored as one sparse row-stochastic matrix per action.  Grids always
carry one extra absorbing "outside" state appended after the last cell, so that
Monte-Carlo samples leaving the gridded domain keep every row stochastic.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class StateGrid:
    """Axis-aligned uniform grid over a box; each cell is represented by its center.

    Cells are numbered in C order over ``dims``.  Index ``n_cells`` is reserved for
    the absorbing out-of-domain state.
    """

    dims: tuple[int, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if not (len(self.dims) == len(self.lower) == len(self.upper)) or not self.dims:
            raise ValueError("dims, lower and upper must have the same non-zero length")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"every cell count must be >= 1, got {self.dims}")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("upper bound must exceed lower bound on every axis")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_states(self) -> int:
        return self.n_cells + 1

    @property
    def out_index(self) -> int:
        return self.n_cells

    @property
    def cell_size(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.dims)

    def multi_index(self, index) -> tuple:
        return np.unravel_index(index, self.dims)

    def cell_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(multi), self.dims)

    def center_of(self, multi) -> np.ndarray:
        multi = np.asarray(multi, dtype=float)
        return np.array(self.lower) + (multi + 0.5) * self.cell_size

    @property
    def cell_centers(self) -> np.ndarray:
        """Centers of all real cells, shape ``(n_cells, ndim)``."""
        multi = np.stack(self.multi_index(np.arange(self.n_cells)), axis=-1)
        return self.center_of(multi)

    def locate(self, points) -> np.ndarray:
        """Cell index of every point; points outside the box map to ``out_index``.

        Boxes are half-open ``[lo, hi)`` per axis except the last one, which is closed.
        """
        pts = np.asarray(points, dtype=float)
        pts = pts.reshape(-1, self.ndim)
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        idx = np.floor((pts - lo) / self.cell_size).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.dims) - 1)
        flat = np.ravel_multi_index(tuple(idx.T), self.dims)
        return np.where(inside, flat, self.out_index)


@dataclass(frozen=True)
class ActionSet:
    actions: np.ndarray

    def __post_init__(self):
        acts = np.asarray(self.actions, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        if acts.shape[0] < 1:
            raise ValueError("an action set needs at least one action")
        if len(np.unique(acts, axis=0)) != len(acts):
            raise ValueError("actions must be distinct")
        object.__setattr__(self, "actions", acts)

    def __len__(self) -> int:
        return self.actions.shape[0]


@dataclass(frozen=True, eq=False)
class RegionMask:
    member: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "member", np.asarray(self.member, dtype=bool).copy())
        self.member.setflags(write=False)

    def __len__(self) -> int:
        return self.member.shape[0]

    def __eq__(self, other):
        # membership only; the label is cosmetic
        return isinstance(other, RegionMask) and np.array_equal(self.member, other.member)

    __hash__ = None

    def complement(self, name: str | None = None) -> "RegionMask":
        return RegionMask(~self.member, name if name is not None else f"not {self.name}")

    def issubset(self, other: "RegionMask") -> bool:
        return bool(np.all(~self.member | other.member))

    def minus(self, other: "RegionMask", name: str = "") -> "RegionMask":
        return RegionMask(self.member & ~other.member, name)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    @classmethod
    def from_indices(cls, n_states: int, indices, name: str = "") -> "RegionMask":
        member = np.zeros(n_states, dtype=bool)
        member[list(indices)] = True
        return cls(member, name)


class TransitionModel:
    """Finite kernel ``T(x'|x,u)`` stored as one sparse ``(n_states, n_states)`` matrix per action.

    ``grid`` and ``actions`` are optional metadata for models built from a gridded
    system; tiny hand-made MDPs leave them unset.
    """

    def __init__(self, kernel, grid: StateGrid | None = None, actions: ActionSet | None = None):
        if isinstance(kernel, np.ndarray) or (
            isinstance(kernel, (list, tuple)) and not sp.issparse(kernel[0])
        ):
            dense = np.asarray(kernel, dtype=float)
            if dense.ndim != 3 or dense.shape[1] != dense.shape[2]:
                raise ValueError("dense kernel must have shape (n_actions, n_states, n_states)")
            mats = [sp.csr_matrix(dense[a]) for a in range(dense.shape[0])]
        else:
            mats = [sp.csr_matrix(m, dtype=float) for m in kernel]
        if not mats:
            raise ValueError("kernel needs at least one action")
        shape = mats[0].shape
        if shape[0] != shape[1] or any(m.shape != shape for m in mats):
            raise ValueError("every action matrix must be square with a common size")
        for m in mats:
            m.sort_indices()
        self.matrices: list[sp.csr_matrix] = mats
        self.grid = grid
        self.actions = actions
        if grid is not None and grid.n_states != shape[0]:
            raise ValueError("grid size does not match kernel")
        if actions is not None and len(actions) != len(mats):
            raise ValueError("action set size does not match kernel")
        self.validate()

    @property
    def n_states(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.matrices)

    def validate(self, tol: float = ROW_SUM_TOL) -> None:
        for a, m in enumerate(self.matrices):
            if m.nnz and (m.data.min() < 0.0 or m.data.max() > 1.0):
                raise ValueError(f"kernel entries of action {a} leave [0, 1]")
            sums = np.asarray(m.sum(axis=1)).ravel()
            bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
            if bad.size:
                raise ValueError(f"row {bad[0]} of action {a} sums to {sums[bad[0]]!r}, not 1")

    def dense(self) -> np.ndarray:
        """Kernel as an array of shape ``(n_actions, n_states, n_states)``."""
        return np.stack([m.toarray() for m in self.matrices])

    def row(self, action: int, state: int) -> np.ndarray:
        return self.matrices[action].getrow(state).toarray().ravel()

    def expect(self, values: np.ndarray) -> np.ndarray:
        """``out[x, u] = sum_x' T(x'|x,u) values[x']``."""
        return np.stack([m @ values for m in self.matrices], axis=1)

    def __eq__(self, other):
        if not isinstance(other, TransitionModel) or other.n_actions != self.n_actions:
            return NotImplemented
        return all((a != b).nnz == 0 for a, b in zip(self.matrices, other.matrices))

    __hash__ = None

    # -- persistence ---------------------------------------------------------
    def to_csv(self, path) -> None:
        """Write (action, from, to, prob) triples, sorted, with round-trip float formatting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["action", "from", "to", "prob"])
            for a, m in enumerate(self.matrices):
                coo = m.tocoo()
                order = np.lexsort((coo.col, coo.row))
                for i, j, p in zip(coo.row[order], coo.col[order], coo.data[order]):
                    w.writerow([a, int(i), int(j), repr(float(p))])

    @classmethod
    def from_csv(cls, path, n_states: int | None = None, n_actions: int | None = None, **meta):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        act = rows[:, 0].astype(int)
        src = rows[:, 1].astype(int)
        dst = rows[:, 2].astype(int)
        n_states = n_states or int(max(src.max(), dst.max())) + 1
        n_actions = n_actions or int(act.max()) + 1
        mats = []
        for a in range(n_actions):
            sel = act == a
            mats.append(sp.csr_matrix((rows[sel, 3], (src[sel], dst[sel])), shape=(n_states, n_states)))
        return cls(mats, **meta)

    def save_npz(self, path) -> None:
        stacked = sp.vstack(self.matrices).tocsr()
        sp.save_npz(path, stacked, compressed=False)

    @classmethod
    def load_npz(cls, path, n_actions: int, **meta):
        stacked = sp.load_npz(path).tocsr()
        n = stacked.shape[1]
        return cls([stacked[a * n:(a + 1) * n] for a in range(n_actions)], **meta)


Dynamics = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
NoiseSampler = Callable[[np.random.Generator, tuple], np.ndarray]


def _pair_rng(seed: int, state: int) -> np.random.Generator:
    # keyed by (seed, state): draws for (action, sample) are positional, so the
    # result does not depend on chunking or on the order states are visited
    return np.random.default_rng([int(seed), int(state)])


def estimate_kernel(
    dynamics: Dynamics,
    grid: StateGrid,
    actions: ActionSet,
    samples_per_pair: int,
    seed: int,
    noise: NoiseSampler,
    workers: int = 1,
    chunk: int = 512,
) -> TransitionModel:
    """Monte-Carlo estimate of the gridded kernel.

    ``dynamics(states, actions, noise)`` must be vectorised over its leading axis.
    Every cell center is simulated ``samples_per_pair`` times under every action and
    the landing cells are counted; landings outside the grid go to the absorbing
    out-of-domain state.
    """
    if samples_per_pair < 1:
        raise ValueError("samples_per_pair must be >= 1")
    n_act = len(actions)
    n_cells = grid.n_cells
    centers = grid.cell_centers

    def simulate(lo: int, hi: int):
        states = np.arange(lo, hi)
        draws = np.stack([noise(_pair_rng(seed, s), (n_act, samples_per_pair)) for s in states])
        # draws: (n_chunk, n_act, samples, ...)
        n_chunk = hi - lo
        x = np.repeat(centers[lo:hi], n_act * samples_per_pair, axis=0)
        u = np.tile(np.repeat(actions.actions, samples_per_pair, axis=0), (n_chunk, 1))
        w = draws.reshape((n_chunk * n_act * samples_per_pair,) + draws.shape[3:])
        nxt = np.asarray(dynamics(x, u, w), dtype=float).reshape(-1, grid.ndim)
        if not np.all(np.isfinite(nxt)):
            raise ValueError("dynamics returned a non-finite next state")
        dest = grid.locate(nxt)
        src = np.repeat(states, n_act * samples_per_pair)
        act = np.tile(np.repeat(np.arange(n_act), samples_per_pair), n_chunk)
        return act, src, dest

    bounds = [(lo, min(lo + chunk, n_cells)) for lo in range(0, n_cells, chunk)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: simulate(*b), bounds))
    else:
        parts = [simulate(*b) for b in bounds]
    act = np.concatenate([p[0] for p in parts])
    src = np.concatenate([p[1] for p in parts])
    dest = np.concatenate([p[2] for p in parts])

    n = grid.n_states
    mats = []
    for a in range(n_act):
        sel = act == a
        counts = sp.coo_matrix(
            (np.ones(int(sel.sum())), (src[sel], dest[sel])), shape=(n, n)
        ).tocsr()
        counts.sum_duplicates()
        counts.data /= samples_per_pair
        out = grid.out_index
        probs = counts + sp.csr_matrix(([1.0], ([out], [out])), shape=(n, n))
        mats.append(probs.tocsr())
    return TransitionModel(mats, grid=grid, actions=actions)


def mask_from_predicate(grid: StateGrid, predicate: Callable[[np.ndarray], np.ndarray], name: str = "") -> RegionMask:
    """Membership of each cell center; the out-of-domain state is never a member.

    ``predicate`` receives all centers at once, shape ``(n_cells, ndim)``.
    """
    inside = np.asarray(predicate(grid.cell_centers), dtype=bool).reshape(grid.n_cells)
    return RegionMask(np.append(inside, False), name)


def mask_lookup(grid: StateGrid, mask: RegionMask) -> Callable[[np.ndarray], np.ndarray]:
    """Point predicate induced by a cell mask (piecewise constant over cells)."""

    def contains(points):
        return mask.member[grid.locate(points)]

    return contains
