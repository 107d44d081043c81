"""Estimator-style wrappers (``fit`` / ``transform``) around the functional API."""
from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation as V
from .diagnostics import multiplier_certificate
from .energy import constrained_gradient
from .grid import TorusGrid
from .minmax import SearchConfig, optimize_family
from .solver import FlowConfig, solve_critical
from .voxel import MorseOrder, batch_theta, level_area_K


class ConstrainedAllenCahnSolver(BaseEstimator):
    """Find a mean-zero critical point from an initial field.

    ``fit(u0)`` takes a ScalarField, or an array matching ``grid_res``.
    Fitted attributes: ``u_``, ``lambda_``, ``energy_``, ``residual_``,
    ``index_``, ``converged_``, ``n_iter_``.
    """

    def __init__(self, eps=0.05, potential="glued_quartic", sides=(1.0,), grid_res=(256,),
                 tau=None, tol=None, max_iters=200_000):
        self.eps = eps
        self.potential = potential
        self.sides = sides
        self.grid_res = grid_res
        self.tau = tau
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, u0, y=None):
        eps = V.check_positive(self.eps, "eps")
        pot = V.check_potential(self.potential)
        grid = getattr(u0, "grid", None) or V.check_grid(self.sides, self.grid_res)
        u0 = V.check_field(u0, grid)
        cfg = FlowConfig(tau=self.tau, tol=self.tol, max_iters=V.check_int(self.max_iters, "max_iters"))
        cp = solve_critical(u0, eps, pot, cfg, record_history=False)
        self.critical_point_ = cp
        self.u_ = cp.u
        self.lambda_ = cp.lam
        self.energy_ = cp.energy
        self.residual_ = cp.residual
        self.index_ = cp.index_estimate
        self.converged_ = cp.converged
        self.n_iter_ = cp.iterations
        return self

    def gradient_norm(self, u):
        """L^2 norm of the constrained gradient at ``u`` (a fitted field by default)."""
        check_is_fitted(self, "u_")
        u = V.check_field(u, self.u_.grid)
        return constrained_gradient(u, self.eps, V.check_potential(self.potential)).norm()

    def certificate(self, eta=None):
        check_is_fitted(self, "u_")
        return multiplier_certificate(self.u_, self.eps, V.check_potential(self.potential), eta)


class HalfVolumeWidth(BaseEstimator):
    """Upper-bound estimate of a normalized min-max level from odd sphere families.

    ``fit()`` needs no data. Fitted attributes: ``value_`` and ``estimate_``.
    """

    def __init__(self, p=1, eps=0.05, constrained=True, potential="glued_quartic",
                 sides=(1.0, 1.0), res=128, screen_res=64, deltas=None, max_mode_sets=4,
                 n_polish=3, seed=0):
        self.p = p
        self.eps = eps
        self.constrained = constrained
        self.potential = potential
        self.sides = sides
        self.res = res
        self.screen_res = screen_res
        self.deltas = deltas
        self.max_mode_sets = max_mode_sets
        self.n_polish = n_polish
        self.seed = seed

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            sides=tuple(self.sides), res=V.check_int(self.res, "res", 2),
            screen_res=V.check_int(self.screen_res, "screen_res", 2),
            deltas=None if self.deltas is None else tuple(self.deltas),
            max_mode_sets=V.check_int(self.max_mode_sets, "max_mode_sets", 1),
            n_polish=V.check_int(self.n_polish, "n_polish", 1), seed=V.check_int(self.seed, "seed"),
        )

    def fit(self, X=None, y=None):
        est = optimize_family(V.check_int(self.p, "p"), V.check_positive(self.eps, "eps"),
                              V.check_potential(self.potential), bool(self.constrained),
                              self.search_config())
        self.estimate_ = est
        self.value_ = est.value
        return self


class HalfVolumeRetraction(TransformerMixin, BaseEstimator):
    """Retract voxel sets onto half-volume sets along a cell order.

    ``fit`` builds the order and its maximal prefix area ``K_``. ``transform``
    maps a stack of binary masks ``(n_sets, *grid_shape)`` or
    ``(n_sets, n_cells)`` to their retractions at parameter ``t``, returned as
    a boolean ``(n_sets, n_cells)`` matrix.
    """

    def __init__(self, sides=(1.0, 1.0), res=(16, 16), order="height", t=1.0):
        self.sides = sides
        self.res = res
        self.order = order
        self.t = t

    def fit(self, X=None, y=None):
        grid = V.check_grid(self.sides, self.res)
        self.grid_: TorusGrid = grid
        self.order_ = MorseOrder(grid, self.order)
        self.K_ = level_area_K(self.order_)
        return self

    def transform(self, X):
        check_is_fitted(self, "order_")
        masks = V.check_masks(X, self.grid_)
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        return batch_theta(masks, float(self.t), self.order_)


__all__ = ["ConstrainedAllenCahnSolver", "HalfVolumeWidth", "HalfVolumeRetraction"]
