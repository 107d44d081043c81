"""Periodic flat tori, scalar fields and spectral operators on them."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class GridMismatchError(ValueError):
    pass


class NonZeroMeanError(ValueError):
    """Raised by :func:`poisson_solve` for a right-hand side with non-zero mean."""

    def __init__(self, mean: float):
        super().__init__(f"Poisson right-hand side must have zero mean (mean = {mean:.3e})")
        self.mean = mean


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the flat torus ``prod_i [0, L_i)``.

    ``sides`` are the side lengths, ``res`` the number of points per axis
    (powers of two). Arrays on the grid are indexed ``[i0, i1, ...]`` with
    axis ``i`` running along side ``L_i``.
    """

    sides: tuple
    res: tuple

    def __post_init__(self):
        sides = tuple(float(s) for s in np.atleast_1d(self.sides))
        res = tuple(int(n) for n in np.atleast_1d(self.res))
        if len(res) == 1 and len(sides) > 1:
            res = res * len(sides)
        if len(sides) == 1 and len(res) > 1:
            sides = sides * len(res)
        if len(sides) != len(res):
            raise ValueError("sides and res must have the same length")
        if not 1 <= len(res) <= 3:
            raise ValueError("only dimensions 1, 2 and 3 are supported")
        if any(s <= 0 for s in sides):
            raise ValueError("side lengths must be positive")
        if not all(_is_pow2(n) and n >= 2 for n in res):
            raise ValueError(f"resolutions must be powers of two >= 2, got {res}")
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "res", res)

    @classmethod
    def unit(cls, dim: int, n: int) -> "TorusGrid":
        return cls((1.0,) * dim, (n,) * dim)

    # geometry -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.res)

    @property
    def shape(self) -> tuple:
        return self.res

    @property
    def size(self) -> int:
        return int(np.prod(self.res))

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.sides, self.res))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def total_volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def half_volume(self) -> float:
        return 0.5 * self.total_volume

    def coords(self) -> list[np.ndarray]:
        return [np.arange(n) * (L / n) for L, n in zip(self.sides, self.res)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.coords(), indexing="ij")

    def halved(self) -> "TorusGrid":
        return TorusGrid(self.sides, tuple(max(2, n // 2) for n in self.res))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "sides": list(self.sides), "res": list(self.res)}

    # spectral data (rfftn layout, last axis halved) ---------------------
    @property
    def spectral_shape(self) -> tuple:
        return self.res[:-1] + (self.res[-1] // 2 + 1,)

    def wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers ``2 pi k_i / L_i`` broadcastable to the rfft layout."""
        return _wavenumbers(self)

    @property
    def mu(self) -> np.ndarray:
        """Laplace eigenvalues ``sum_i (2 pi k_i / L_i)^2`` in rfft layout."""
        return _mu(self)

    @property
    def parseval_weights(self) -> np.ndarray:
        """Multiplicity of each rfft coefficient in the full spectrum."""
        return _weights(self)

    def fft(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.rfftn(values, axes=axes, workers=1)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return sfft.irfftn(coeffs, s=self.res, axes=axes, workers=1)

    # array-level kernels used throughout the package ---------------------
    def integrate_array(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return self.cell_volume * np.sum(values, axis=axes)

    def mean_array(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return np.mean(values, axis=axes)

    def lap_array(self, values: np.ndarray) -> np.ndarray:
        return self.ifft(-self.mu * self.fft(values))

    def grad_array(self, values: np.ndarray) -> list[np.ndarray]:
        c = self.fft(values)
        return [self.ifft(1j * k * c) for k in _deriv_wavenumbers(self)]

    def dirichlet_array(self, values: np.ndarray) -> np.ndarray:
        """``int |grad u|^2`` evaluated spectrally (batched over leading axes)."""
        c = self.fft(values)
        axes = tuple(range(-self.dim, 0))
        s = np.sum(self.parseval_weights * self.mu * (c.real**2 + c.imag**2), axis=axes)
        return s * self.cell_volume / self.size

    def field(self, values) -> "ScalarField":
        return ScalarField(self, values)

    def zeros(self) -> "ScalarField":
        return ScalarField(self, np.zeros(self.shape))

    def constant(self, c: float) -> "ScalarField":
        return ScalarField(self, np.full(self.shape, float(c)))


@functools.lru_cache(maxsize=64)
def _wavenumbers(grid: TorusGrid) -> list[np.ndarray]:
    out = []
    for axis, (L, n) in enumerate(zip(grid.sides, grid.res)):
        if axis == grid.dim - 1:
            k = np.fft.rfftfreq(n, d=1.0 / n)
        else:
            k = np.fft.fftfreq(n, d=1.0 / n)
        shape = [1] * grid.dim
        shape[axis] = k.size
        out.append((2.0 * np.pi / L) * k.reshape(shape))
    return out


@functools.lru_cache(maxsize=64)
def _deriv_wavenumbers(grid: TorusGrid) -> list[np.ndarray]:
    out = []
    for axis, k in enumerate(_wavenumbers(grid)):
        k = k.copy()
        # the derivative of the Nyquist mode is not real-valued: drop it
        k.reshape(-1)[grid.res[axis] // 2] = 0.0
        out.append(k)
    return out


@functools.lru_cache(maxsize=64)
def _mu(grid: TorusGrid) -> np.ndarray:
    mu = np.zeros(grid.spectral_shape)
    for k in _wavenumbers(grid):
        mu = mu + k**2
    mu.setflags(write=False)
    return mu


@functools.lru_cache(maxsize=64)
def _weights(grid: TorusGrid) -> np.ndarray:
    w = np.full(grid.spectral_shape, 2.0)
    w[..., 0] = 1.0
    if grid.res[-1] % 2 == 0:
        w[..., -1] = 1.0
    w.setflags(write=False)
    return w


class ScalarField:
    """Real values on a :class:`TorusGrid`.

    Fields behave as immutable values: arithmetic returns new fields and the
    underlying array is marked read-only.
    """

    __slots__ = ("grid", "values")
    __array_priority__ = 100

    def __init__(self, grid: TorusGrid, values):
        arr = np.array(values, dtype=float)
        if arr.shape == ():
            arr = np.full(grid.shape, float(arr))
        if arr.shape != grid.shape:
            raise GridMismatchError(f"values of shape {arr.shape} do not fit grid {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    def __repr__(self):
        return f"ScalarField(grid={self.grid.res}, max|u|={np.max(np.abs(self.values)):.4g})"

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same(self, other)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def norm(self) -> float:
        """L^2 norm."""
        return float(np.sqrt(l2_inner(self, self)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_same(u: ScalarField, v: ScalarField):
    if u.grid != v.grid:
        raise GridMismatchError(f"fields live on different grids: {u.grid} vs {v.grid}")


def as_field(u, grid: TorusGrid | None = None) -> ScalarField:
    if isinstance(u, ScalarField):
        if grid is not None:
            _check_same(u, ScalarField(grid, np.zeros(grid.shape)))
        return u
    if grid is None:
        raise TypeError("a grid is required to wrap a raw array")
    return ScalarField(grid, u)


# ---------------------------------------------------------------------------
# operations


def laplacian(u: ScalarField) -> ScalarField:
    """Exact spectral Laplacian."""
    return ScalarField(u.grid, u.grid.lap_array(u.values))


def gradient(u: ScalarField) -> list[ScalarField]:
    return [ScalarField(u.grid, g) for g in u.grid.grad_array(u.values)]


def integrate(u: ScalarField) -> float:
    return float(u.grid.integrate_array(u.values))


def l2_inner(u: ScalarField, v: ScalarField) -> float:
    _check_same(u, v)
    return float(u.grid.cell_volume * np.sum(u.values * v.values))


def mean(u: ScalarField) -> float:
    return float(np.mean(u.values))


def spectral_coefficients(u: ScalarField) -> np.ndarray:
    """Coefficients ``c`` with ``l2_inner(u, u) == sum(parseval_weights * |c|^2)``."""
    g = u.grid
    return g.fft(u.values) * np.sqrt(g.cell_volume / g.size)


def poisson_solve(g: ScalarField, rtol: float = 1e-10) -> ScalarField:
    """Mean-zero solution ``psi`` of ``-Laplacian(psi) = g``.

    Raises
    ------
    NonZeroMeanError
        If ``|mean(g)| > rtol * rms(g)``.
    """
    m = mean(g)
    scale = float(np.sqrt(np.mean(g.values**2)))
    if abs(m) > rtol * scale:
        raise NonZeroMeanError(m)
    grid = g.grid
    c = grid.fft(g.values)
    mu = grid.mu
    out = np.zeros_like(c)
    nz = mu > 0
    out[nz] = c[nz] / mu[nz]
    return ScalarField(grid, grid.ifft(out))


def mollify(u: ScalarField, eta: float) -> ScalarField:
    """Periodic heat semigroup at time ``eta**2`` (Fourier multiplier ``exp(-mu eta^2)``).

    Preserves the mean exactly. For ``eta`` of at least two grid spacings the
    discrete kernel is positive to rounding, so the sup norm does not grow.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if eta == 0:
        return u
    grid = u.grid
    c = grid.fft(u.values) * np.exp(-grid.mu * eta**2)
    out = grid.ifft(c)
    return ScalarField(grid, out - np.mean(out) + np.mean(u.values))


# ---------------------------------------------------------------------------
# Fourier eigenbasis


@dataclass(frozen=True)
class SpectralMode:
    k: tuple
    kind: str  # "const", "cos" or "sin"
    eigenvalue: float


class SpectralBasis:
    """Real, L^2-normalised Laplace eigenfunctions of a torus grid.

    Modes are ordered by eigenvalue, then by frequency vector, with the cosine
    before the sine. Frequencies at or beyond the Nyquist index are skipped,
    so every listed mode is exactly represented on the grid.
    """

    def __init__(self, grid: TorusGrid, max_modes: int = 256):
        self.grid = grid
        kmax = [n // 2 - 1 for n in grid.res]
        cands = []
        for k in itertools.product(*[range(-m, m + 1) for m in kmax]):
            if not any(k):
                continue
            first = next(c for c in k if c != 0)
            if first < 0:
                continue
            mu = sum((2.0 * np.pi * ki / L) ** 2 for ki, L in zip(k, grid.sides))
            cands.append((mu, tuple(-abs(c) for c in k), k))
        cands.sort()
        modes = [SpectralMode((0,) * grid.dim, "const", 0.0)]
        for mu, _, k in cands:
            modes.append(SpectralMode(k, "cos", mu))
            modes.append(SpectralMode(k, "sin", mu))
            if len(modes) > max_modes:
                break
        self.modes = modes[: max_modes + 1]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([m.eigenvalue for m in self.modes])

    def mode_array(self, i: int) -> np.ndarray:
        m = self.modes[i]
        vol = self.grid.total_volume
        if m.kind == "const":
            return np.full(self.grid.shape, 1.0 / np.sqrt(vol))
        phase = np.zeros(self.grid.shape)
        for ki, L, x in zip(m.k, self.grid.sides, self.grid.mesh()):
            phase = phase + (2.0 * np.pi * ki / L) * x
        f = np.cos(phase) if m.kind == "cos" else np.sin(phase)
        return np.sqrt(2.0 / vol) * f

    def mode(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.mode_array(i))

    def nonconstant(self, n: int) -> list[int]:
        """Indices of the ``n`` lowest non-constant modes."""
        if n > len(self.modes) - 1:
            raise ValueError(f"only {len(self.modes) - 1} non-constant modes available")
        return list(range(1, n + 1))


def fourier_mode(grid: TorusGrid, k, kind: str = "cos") -> ScalarField:
    """Unit-L^2 mode ``sqrt(2/Vol) cos(2 pi k.x / L)`` (or ``sin``)."""
    phase = np.zeros(grid.shape)
    for ki, L, x in zip(k, grid.sides, grid.mesh()):
        phase = phase + (2.0 * np.pi * ki / L) * x
    f = np.cos(phase) if kind == "cos" else np.sin(phase)
    return ScalarField(grid, np.sqrt(2.0 / grid.total_volume) * f)
