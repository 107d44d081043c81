"""Voxel sets on a periodic grid and volume-adjusting retractions onto half-volume sets.

Sets are boolean masks over the cells of a :class:`~halfvolume.grid.TorusGrid`.
A cell order plays the role of a Morse function: its prefixes ``B_s`` are the
sublevel fills. Batched helpers take a ``(n_sets, n_cells)`` boolean matrix of
flattened (C-order) masks and are what the single-set functions call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import TorusGrid

ORDERS = ("height", "lex")


class VolumeError(ValueError):
    """A set above half volume was given where at most half volume is required."""


class SweepoutError(ValueError):
    pass


def _check_even(grid: TorusGrid):
    if grid.size % 2:
        raise ValueError("voxel grids need an even number of cells")


class VoxelSet:
    """Immutable set of grid cells."""

    __slots__ = ("grid", "mask")

    def __init__(self, grid: TorusGrid, mask):
        m = np.array(mask, dtype=bool)
        if m.shape != grid.shape:
            m = m.reshape(grid.shape)
        m.setflags(write=False)
        self.grid = grid
        self.mask = m

    @classmethod
    def empty(cls, grid: TorusGrid) -> "VoxelSet":
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @classmethod
    def full(cls, grid: TorusGrid) -> "VoxelSet":
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @property
    def flat(self) -> np.ndarray:
        return self.mask.ravel()

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def complement(self) -> "VoxelSet":
        return VoxelSet(self.grid, ~self.mask)

    def union(self, other: "VoxelSet") -> "VoxelSet":
        return VoxelSet(self.grid, self.mask | other.mask)

    def symmetric_difference(self, other: "VoxelSet") -> "VoxelSet":
        return VoxelSet(self.grid, self.mask ^ other.mask)

    def issubset(self, other: "VoxelSet") -> bool:
        return bool(np.all(~self.mask | other.mask))

    def __eq__(self, other):
        return isinstance(other, VoxelSet) and self.grid == other.grid and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.grid, self.mask.tobytes()))

    def __repr__(self):
        return f"VoxelSet(grid={self.grid.res}, cells={self.count})"


# ---------------------------------------------------------------------------
# measures


def face_areas(grid: TorusGrid) -> tuple:
    """Area of a face orthogonal to each axis (1 in one dimension)."""
    return tuple(grid.cell_volume / h for h in grid.spacing)


def volume(S: VoxelSet) -> float:
    return S.count * S.grid.cell_volume


def boundary_area(S: VoxelSet) -> float:
    """Total area of faces separating a member from a non-member cell."""
    return float(batch_area(S.flat[None], S.grid)[0])


def symmetric_difference_volume(S: VoxelSet, T: VoxelSet) -> float:
    return volume(S.symmetric_difference(T))


def batch_volume(masks: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return masks.sum(axis=1) * grid.cell_volume


def batch_area(masks: np.ndarray, grid: TorusGrid) -> np.ndarray:
    m = masks.reshape((-1,) + grid.shape)
    total = np.zeros(m.shape[0])
    for axis, fa in enumerate(face_areas(grid)):
        if grid.shape[axis] == 1:
            continue
        diff = m != np.roll(m, 1, axis=axis + 1)
        total += fa * diff.reshape(m.shape[0], -1).sum(axis=1)
    return total


# ---------------------------------------------------------------------------
# cell orders


@dataclass(frozen=True)
class MorseOrder:
    """Total order on the cells of a grid.

    ``"height"`` sorts by the first coordinate of the cell centre and breaks
    ties by the C-order flat index, which is C order itself. ``"lex"`` is
    column-major (Fortran) order: it advances along the last axis first.
    """

    grid: TorusGrid
    kind: str = "height"
    cells: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.cells is None:
            if self.kind == "height":
                cells = np.arange(self.grid.size)
            elif self.kind == "lex":
                idx = np.unravel_index(np.arange(self.grid.size), self.grid.shape, order="F")
                cells = np.ravel_multi_index(idx, self.grid.shape)
            else:
                raise ValueError(f"unknown order {self.kind!r}; choose from {ORDERS} or pass cells")
        else:
            cells = np.asarray(self.cells, dtype=np.int64)
            if sorted(cells.tolist()) != list(range(self.grid.size)):
                raise ValueError("cells must be a permutation of the flat cell indices")
        cells = np.asarray(cells, dtype=np.int64)
        cells.setflags(write=False)
        rank = np.empty_like(cells)
        rank[cells] = np.arange(cells.size)
        rank.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_rank", rank)

    @property
    def rank(self) -> np.ndarray:
        return self._rank

    @property
    def half_count(self) -> int:
        _check_even(self.grid)
        return self.grid.size // 2

    def prefix(self, s: int) -> VoxelSet:
        """``B_s``: the first ``s`` cells."""
        if not 0 <= s <= self.grid.size:
            raise ValueError("prefix length out of range")
        return VoxelSet(self.grid, (self.rank < s).reshape(self.grid.shape))

    def prefix_areas(self) -> np.ndarray:
        """Boundary areas of ``B_0, ..., B_n`` computed incrementally."""
        return _prefix_areas(self)

    def __hash__(self):
        return hash((self.grid, self.kind, self.cells.tobytes()))

    def __eq__(self, other):
        return (isinstance(other, MorseOrder) and self.grid == other.grid
                and np.array_equal(self.cells, other.cells))


def _neighbors(grid: TorusGrid) -> list[tuple[int, np.ndarray]]:
    """Per axis and direction: the axis and the flat index of each cell's neighbour."""
    idx = np.arange(grid.size).reshape(grid.shape)
    out = []
    for axis in range(grid.dim):
        if grid.shape[axis] == 1:
            continue
        out.append((axis, np.roll(idx, -1, axis=axis).ravel()))
        out.append((axis, np.roll(idx, 1, axis=axis).ravel()))
    return out


def _prefix_areas(order: MorseOrder) -> np.ndarray:
    g = order.grid
    inside = np.zeros(g.size, dtype=bool)
    faces = np.zeros((g.size + 1, g.dim), dtype=np.int64)
    cur = np.zeros(g.dim, dtype=np.int64)
    nbrs = _neighbors(g)
    for s, c in enumerate(order.cells):
        for axis, nb in nbrs:
            cur[axis] += -1 if inside[nb[c]] else 1
        inside[c] = True
        faces[s + 1] = cur
    return faces @ np.array(face_areas(g))


def level_area_K(order: MorseOrder) -> float:
    """Largest boundary area among the prefixes of ``order``."""
    return float(np.max(order.prefix_areas()))


# ---------------------------------------------------------------------------
# retractions (batched)


def _need(counts: np.ndarray, t: float, half: int) -> np.ndarray:
    """Number of extra cells needed to reach ``|S| + t (h - |S|)``, rounded up."""
    target = t * (half - counts)
    return np.ceil(target - 1e-9).astype(np.int64).clip(min=0)


def batch_select_s(masks: np.ndarray, t: float, order: MorseOrder) -> np.ndarray:
    """Smallest prefix length ``s`` with ``|S u B_s| >= |S| + t (h - |S|)`` per row.

    Raises
    ------
    VolumeError
        If some row has more than half of the cells.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    half = order.half_count
    counts = masks.sum(axis=1)
    if np.any(counts > half):
        raise VolumeError("select_s needs sets of at most half volume; use the complement")
    need = _need(counts, t, half)
    outside = ~masks[:, order.cells]
    cum = np.cumsum(outside, axis=1)
    pos = np.argmax(cum >= need[:, None], axis=1) + 1
    return np.where(need == 0, 0, pos)


def batch_phi(masks: np.ndarray, t: float, order: MorseOrder) -> np.ndarray:
    s = batch_select_s(masks, t, order)
    return masks | (order.rank[None, :] < s[:, None])


def batch_psi(masks: np.ndarray, t: float, order: MorseOrder) -> np.ndarray:
    """Odd extension: sets above half volume are handled through their complement."""
    half = order.half_count
    big = masks.sum(axis=1) > half
    rep = np.where(big[:, None], ~masks, masks)
    out = batch_phi(rep, t, order)
    return np.where(big[:, None], ~out, out)


def batch_representative(masks: np.ndarray, order: MorseOrder) -> np.ndarray:
    """Of each set and its complement, the one with at most half volume.

    At exactly half volume the member containing the first cell of the order wins.
    """
    half = order.half_count
    counts = masks.sum(axis=1)
    first = masks[:, order.cells[0]]
    flip = (counts > half) | ((counts == half) & ~first)
    return np.where(flip[:, None], ~masks, masks)


def batch_theta(masks: np.ndarray, t: float, order: MorseOrder) -> np.ndarray:
    return batch_phi(batch_representative(masks, order), t, order)


# single-set wrappers


def select_s(S: VoxelSet, t: float, order: MorseOrder) -> int:
    """Prefix length used by :func:`phi`; see :func:`batch_select_s`."""
    return int(batch_select_s(S.flat[None], t, order)[0])


def phi(S: VoxelSet, t: float, order: MorseOrder) -> VoxelSet:
    """``S`` united with the prefix that moves its volume a fraction ``t`` toward half."""
    return VoxelSet(S.grid, batch_phi(S.flat[None], t, order)[0])


def psi(S: VoxelSet, t: float, order: MorseOrder) -> VoxelSet:
    return VoxelSet(S.grid, batch_psi(S.flat[None], t, order)[0])


def theta(S: VoxelSet, t: float, order: MorseOrder) -> VoxelSet:
    """Retraction acting on the boundary of ``S`` through a fixed representative."""
    return VoxelSet(S.grid, batch_theta(S.flat[None], t, order)[0])


# ---------------------------------------------------------------------------
# checks


def area_inflation_check(S: VoxelSet, t: float, order: MorseOrder) -> tuple[float, float, bool]:
    """``(area(S), area(theta(S, t)), after <= before + K)``."""
    before = boundary_area(S)
    after = boundary_area(theta(S, t, order))
    return before, after, bool(after <= before + level_area_K(order) + 1e-12)


def continuity_bound(sym_diff_volume, t: float, r: float, grid: TorusGrid):
    return 5.0 * sym_diff_volume + 2.0 * abs(t - r) * grid.half_volume + grid.cell_volume


def continuity_modulus_check(S: VoxelSet, T: VoxelSet, t: float, r: float,
                             order: MorseOrder) -> tuple[float, float, bool]:
    """Compare ``Vol(phi(S,t) ^ phi(T,r))`` with ``5 Vol(S ^ T) + 2|t-r| h + cell``."""
    lhs = symmetric_difference_volume(phi(S, t, order), phi(T, r, order))
    rhs = continuity_bound(symmetric_difference_volume(S, T), t, r, S.grid)
    return lhs, rhs, bool(lhs <= rhs + 1e-12)


def continuity_margin(masks: np.ndarray, ts, order: MorseOrder, block: int = 4096) -> float:
    """Largest violation of the continuity bound over all pairs of ``masks`` and of ``ts``.

    Returns ``max(Vol(phi(S,t) ^ phi(T,r)) - bound) / cell_volume`` over every
    ``(S, T, t, r)``; the bound holds everywhere iff the result is ``<= 0``.
    Each pairwise block is a single matrix product of augmented indicator
    matrices, so the entries are exact small integers.
    """
    grid = order.grid
    X = masks.astype(np.float32)
    cx = X.sum(axis=1)
    one = np.ones((len(X), 1), np.float32)
    fills = {t: batch_phi(masks, float(t), order).astype(np.float32) for t in ts}
    half_cells = grid.half_volume / grid.cell_volume
    worst = -np.inf
    ts = sorted(ts)
    for a, t in enumerate(ts):
        # pairs (r, t) are the transposes of (t, r), so r >= t suffices
        for r in ts[a:]:
            left = np.hstack([fills[t], X, (fills[t].sum(axis=1) - 5 * cx)[:, None], one])
            right = np.hstack([-2 * fills[r], 10 * X, one, (fills[r].sum(axis=1) - 5 * cx)[:, None]])
            lim = 2 * abs(t - r) * half_cells + 1
            for i in range(0, len(X), block):
                worst = max(worst, float((left[i : i + block] @ right.T).max()) - lim)
    return worst


def all_subsets(n_cells: int) -> np.ndarray:
    """Every subset of ``n_cells`` cells as a ``(2**n, n)`` boolean matrix (bit ``i`` = cell ``i``)."""
    if n_cells > 24:
        raise ValueError("exhaustive enumeration is limited to 24 cells")
    codes = np.arange(1 << n_cells, dtype=np.uint32)
    return ((codes[:, None] >> np.arange(n_cells, dtype=np.uint32)) & 1).astype(bool)


# ---------------------------------------------------------------------------
# sweepouts


@dataclass
class DiscreteSweepout:
    """A path of voxel sets, usually from the empty set to the whole grid."""

    grid: TorusGrid
    masks: np.ndarray  # (n_sets, n_cells)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool).reshape(len(self.masks), -1)
        if self.masks.shape[1] != self.grid.size:
            raise SweepoutError("mask size does not match the grid")

    @classmethod
    def from_order(cls, order: MorseOrder) -> "DiscreteSweepout":
        n = order.grid.size
        masks = order.rank[None, :] < np.arange(n + 1)[:, None]
        return cls(order.grid, masks)

    @classmethod
    def from_sets(cls, sets) -> "DiscreteSweepout":
        sets = list(sets)
        return cls(sets[0].grid, np.stack([s.flat for s in sets]))

    def sets(self) -> list[VoxelSet]:
        return [VoxelSet(self.grid, m) for m in self.masks]

    @property
    def areas(self) -> np.ndarray:
        return batch_area(self.masks, self.grid)

    @property
    def max_area(self) -> float:
        return float(self.areas.max())

    def is_path(self) -> bool:
        """Consecutive sets differ and the ends are the empty set and the full grid."""
        steps = np.any(self.masks[1:] != self.masks[:-1], axis=1)
        return bool(steps.all() and not self.masks[0].any() and self.masks[-1].all())


@dataclass
class RetractionReport:
    input_max_area: float
    output_max_area: float
    K: float
    max_volume_error: float
    cell_volume: float
    half_volume_ok: bool
    area_ok: bool
    output_is_admissible_input: bool = True

    @property
    def ok(self) -> bool:
        return self.half_volume_ok and self.area_ok

    def to_dict(self) -> dict:
        return {
            "input_max_area": self.input_max_area, "output_max_area": self.output_max_area,
            "K": self.K, "max_volume_error": self.max_volume_error, "cell_volume": self.cell_volume,
            "half_volume_ok": self.half_volume_ok, "area_ok": self.area_ok,
            "output_is_admissible_input": self.output_is_admissible_input, "ok": self.ok,
        }


def retract_sweepout(sw: DiscreteSweepout, order: MorseOrder) -> tuple[DiscreteSweepout, RetractionReport]:
    """Map every slice to half volume with ``theta(., 1)`` and report the area cost.

    Raises
    ------
    SweepoutError
        If the path does not start empty and end full.
    """
    if sw.grid != order.grid:
        raise SweepoutError("sweepout and order live on different grids")
    if sw.masks[0].any() or not sw.masks[-1].all():
        raise SweepoutError("a sweepout must run from the empty set to the whole grid")
    out = DiscreteSweepout(sw.grid, batch_theta(sw.masks, 1.0, order))
    vol_err = np.abs(batch_volume(out.masks, sw.grid) - sw.grid.half_volume)
    K = level_area_K(order)
    rep = RetractionReport(
        input_max_area=sw.max_area, output_max_area=out.max_area, K=K,
        max_volume_error=float(vol_err.max()), cell_volume=sw.grid.cell_volume,
        half_volume_ok=bool(np.all(vol_err < sw.grid.cell_volume)),
        area_ok=bool(out.max_area <= sw.max_area + K + 1e-12),
    )
    return out, rep


def random_sets(grid: TorusGrid, n: int, rng: np.random.Generator, max_fraction: float = 1.0) -> np.ndarray:
    """``n`` random masks; each row picks a uniform cell count up to ``max_fraction`` of the grid."""
    cap = math.floor(max_fraction * grid.size)
    counts = rng.integers(0, cap + 1, size=n)
    keys = rng.random((n, grid.size))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return ranks < counts[:, None]
