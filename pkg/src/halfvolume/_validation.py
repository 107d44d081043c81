"""Input checks shared by the estimator classes and the command line."""
from __future__ import annotations

import numbers

import numpy as np

from .grid import ScalarField, TorusGrid
from .potentials import DoubleWellPotential, make_potential


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_int(value, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_potential(p) -> DoubleWellPotential:
    if isinstance(p, DoubleWellPotential):
        return p
    if isinstance(p, str):
        return make_potential(p)
    if isinstance(p, dict):
        return make_potential(**p)
    raise TypeError(f"cannot interpret {p!r} as a potential")


def check_grid(sides, res) -> TorusGrid:
    return TorusGrid(tuple(np.atleast_1d(sides).tolist()), tuple(np.atleast_1d(res).tolist()))


def check_field(u, grid: TorusGrid | None = None) -> ScalarField:
    """Accept a ScalarField, or an array together with a grid."""
    if isinstance(u, ScalarField):
        if grid is not None and u.grid != grid:
            raise ValueError("field lives on a different grid")
        return u
    if grid is None:
        raise TypeError("an array input needs the grid it lives on")
    arr = np.asarray(u, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError(f"array of shape {arr.shape} does not match grid {grid.shape}")
    return ScalarField(grid, arr)


def check_masks(X, grid: TorusGrid) -> np.ndarray:
    """Boolean ``(n_sets, n_cells)`` matrix from a stack of 0/1 arrays."""
    arr = np.asarray(X)
    if arr.shape[1:] == grid.shape:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2 or arr.shape[1] != grid.size:
        raise ValueError(f"expected {grid.size} cells per set, got array of shape {np.shape(X)}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("voxel masks must be binary")
    return arr.astype(bool)
