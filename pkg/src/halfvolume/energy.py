"""Allen-Cahn energy, its variations on the mean-zero subspace, and the Morse index there."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .grid import ScalarField, TorusGrid
from .potentials import DoubleWellPotential, sigma


@dataclass(frozen=True)
class EnergyBreakdown:
    """Parts of the energy; ``normalized`` divides the total by ``2 sigma``."""

    dirichlet: float
    potential: float
    total: float
    normalized: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CriticalPoint:
    """A (near-)critical point of the energy restricted to mean-zero fields."""

    u: ScalarField
    epsilon: float
    lam: float
    residual: float
    energy: EnergyBreakdown
    index_estimate: int | None
    iterations: int
    converged: bool = True
    tau_underflow: bool = False
    history: list = field(default_factory=list, repr=False)
    max_mean_ratio: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "residual": self.residual,
            "energy": self.energy.to_dict(),
            "index_estimate": self.index_estimate,
            "iterations": self.iterations,
            "converged": self.converged,
            "tau_underflow": self.tau_underflow,
            "max_mean_ratio": self.max_mean_ratio,
            "grid": self.u.grid.to_dict(),
        }


class IndexComputationError(RuntimeError):
    """The eigenvalue iteration did not converge; ``residuals`` holds what was attained."""

    def __init__(self, message: str, eigenvalues=None, residuals=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.residuals = residuals


def _check_eps(eps: float):
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def energy_values(grid: TorusGrid, values: np.ndarray, eps: float, pot: DoubleWellPotential):
    """Total energies of a stack of fields (leading axes are batch axes)."""
    _check_eps(eps)
    dir_part = 0.5 * eps * grid.dirichlet_array(values)
    pot_part = grid.integrate_array(pot.w(values)) / eps
    return dir_part, pot_part


def energy(u: ScalarField, eps: float, p: DoubleWellPotential) -> EnergyBreakdown:
    """Allen-Cahn energy of ``u`` with a spectral Dirichlet term."""
    d, w = energy_values(u.grid, u.values, eps, p)
    d, w = float(d), float(w)
    tot = d + w
    return EnergyBreakdown(d, w, tot, tot / (2.0 * sigma(p)))


def first_variation(u: ScalarField, eps: float, p: DoubleWellPotential) -> ScalarField:
    """L^2 gradient ``-eps Lap u + W'(u)/eps``."""
    _check_eps(eps)
    g = u.grid
    return ScalarField(g, -eps * g.lap_array(u.values) + p.w1(u.values) / eps)


def lagrange_multiplier(u: ScalarField, eps: float, p: DoubleWellPotential) -> float:
    """Multiplier ``mean(W'(u))/eps`` (the Laplacian term has zero mean)."""
    _check_eps(eps)
    return float(np.mean(p.w1(u.values)) / eps)


def constrained_gradient(u: ScalarField, eps: float, p: DoubleWellPotential) -> ScalarField:
    """Gradient of the energy restricted to mean-zero fields."""
    g = first_variation(u, eps, p)
    return ScalarField(u.grid, g.values - np.mean(g.values))


def second_variation_apply(u: ScalarField, eps: float, p: DoubleWellPotential,
                           v: ScalarField) -> ScalarField:
    """Apply ``L v = -eps Lap v + W''(u) v / eps``."""
    _check_eps(eps)
    g = u.grid
    return ScalarField(g, -eps * g.lap_array(v.values) + p.w2(u.values) * v.values / eps)


# ---------------------------------------------------------------------------
# constrained Morse index


def _deflation_shift(u: ScalarField, eps: float, p: DoubleWellPotential) -> float:
    g = u.grid
    upper = eps * float(np.max(g.mu)) + float(np.max(np.abs(p.w2(u.values)))) / eps
    return upper + 1.0


def constrained_operator(u: ScalarField, eps: float, p: DoubleWellPotential) -> LinearOperator:
    """``P L P + c (I - P)`` with ``P`` the projection onto mean-zero fields.

    The shift ``c`` exceeds the spectral radius of ``L``, so the constant
    direction sits above every mean-zero eigenvalue.
    """
    g = u.grid
    w2 = p.w2(u.values).ravel() / eps
    c = _deflation_shift(u, eps, p)
    shape = g.shape

    def matvec(x):
        x = np.asarray(x, dtype=float).ravel()
        m = x.mean()
        y = x - m
        ly = -eps * g.lap_array(y.reshape(shape)).ravel() + w2 * y
        return ly - ly.mean() + c * m

    return LinearOperator((g.size, g.size), matvec=matvec, rmatvec=matvec, dtype=float)


def constrained_spectrum(u: ScalarField, eps: float, p: DoubleWellPotential, m: int,
                         tol: float = 1e-12, maxiter: int | None = None) -> np.ndarray:
    """The ``m`` lowest eigenvalues of the second variation on mean-zero fields.

    Uses an implicitly restarted Lanczos iteration with operator access only.

    Raises
    ------
    IndexComputationError
        If the iteration does not converge; attained eigenvalues and residual
        norms are attached.
    """
    _check_eps(eps)
    n = u.grid.size
    if m < 1:
        raise ValueError("m must be at least 1")
    if m >= n - 1:
        return np.sort(dense_constrained_spectrum(u, eps, p))[:m]
    op = constrained_operator(u, eps, p)
    ncv = min(n - 1, max(2 * m + 1, m + 32))
    v0 = np.cos(np.arange(n) * 0.7071) + 0.3
    try:
        vals = eigsh(op, k=m, which="SA", tol=tol, ncv=ncv, v0=v0,
                     maxiter=maxiter or 50 * n, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        vals, vecs = exc.eigenvalues, exc.eigenvectors
        res = [float(np.linalg.norm(op.matvec(vecs[:, i]) - vals[i] * vecs[:, i]))
               for i in range(len(vals))]
        raise IndexComputationError(
            f"eigenvalue iteration converged for {len(vals)} of {m} values",
            eigenvalues=np.sort(vals), residuals=res) from exc
    return np.sort(vals)


# eigenvalues within this distance of 0 count as null directions (translations)
ZERO_EIGENVALUE_TOL = 1e-6


def constrained_index(u: ScalarField, eps: float, p: DoubleWellPotential, m: int = 16,
                      zero_tol: float = ZERO_EIGENVALUE_TOL) -> int:
    """Number of eigenvalues below ``-zero_tol`` among the ``m`` lowest on mean-zero fields.

    Translation invariance makes some eigenvalues of a converged critical point
    vanish up to solver tolerance; ``zero_tol`` keeps them out of the count.
    """
    vals = constrained_spectrum(u, eps, p, m)
    return int(np.sum(vals < -zero_tol))


def dense_constrained_matrix(u: ScalarField, eps: float, p: DoubleWellPotential) -> np.ndarray:
    """Dense matrix of the mean-zero-restricted second variation (small grids only)."""
    g = u.grid
    n = g.size
    if n > 4096:
        raise ValueError("dense operator limited to grids with at most 4096 points")
    eye = np.eye(n).reshape((n,) + g.shape)
    lap = g.lap_array(eye).reshape(n, n)
    lmat = -eps * lap + np.diag(p.w2(u.values).ravel() / eps)
    lmat = 0.5 * (lmat + lmat.T)
    proj = np.eye(n) - np.full((n, n), 1.0 / n)
    c = _deflation_shift(u, eps, p)
    return proj @ lmat @ proj + c * (np.eye(n) - proj)


def dense_constrained_spectrum(u: ScalarField, eps: float, p: DoubleWellPotential) -> np.ndarray:
    """All eigenvalues of the dense mean-zero operator except the deflated constant."""
    vals = np.linalg.eigvalsh(dense_constrained_matrix(u, eps, p))
    return vals[:-1]


def dense_constrained_index(u: ScalarField, eps: float, p: DoubleWellPotential,
                            zero_tol: float = ZERO_EIGENVALUE_TOL) -> int:
    return int(np.sum(dense_constrained_spectrum(u, eps, p) < -zero_tol))
