"""Mean-preserving semi-implicit gradient flow to constrained critical points."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .energy import (
    CriticalPoint,
    IndexComputationError,
    constrained_gradient,
    constrained_index,
    energy,
    lagrange_multiplier,
)
from .grid import ScalarField
from .potentials import DoubleWellPotential

log = logging.getLogger(__name__)

# relative slack when comparing energies of successive iterates
ENERGY_ROUNDOFF = 1e-13


@dataclass(frozen=True)
class FlowConfig:
    """Step-size and stopping parameters of :func:`solve_critical`.

    ``tau`` and ``tol`` default to ``eps`` and ``1e-8 * sqrt(Vol)`` when left
    as ``None``. ``grow`` (>= 1) lets the step recover after a backtrack, never
    beyond the initial ``tau``.
    """

    tau: float | None = None
    tol: float | None = None
    max_iters: int = 200_000
    backtrack_factor: float = 0.5
    min_tau: float = 1e-14
    grow: float = 1.1
    index_modes: int = 16
    compute_index: bool = True
    index_max_points: int = 1 << 16

    def __post_init__(self):
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.grow < 1:
            raise ValueError("grow must be at least 1")

    def resolved(self, eps: float, volume: float) -> "FlowConfig":
        tau = eps if self.tau is None else self.tau
        tol = 1e-8 * np.sqrt(volume) if self.tol is None else self.tol
        return FlowConfig(**{**asdict(self), "tau": float(tau), "tol": float(tol)})

    def to_dict(self) -> dict:
        return asdict(self)


def flow_step(u: ScalarField, eps: float, p: DoubleWellPotential, tau: float) -> ScalarField:
    """One linearly implicit step ``(I - tau eps Lap) u+ = u - tau (W'(u)/eps - lambda)``.

    The zero Fourier coefficient is carried over from ``u`` so the mean is
    preserved exactly.
    """
    g = u.grid
    lam = lagrange_multiplier(u, eps, p)
    rhs = u.values - tau * (p.w1(u.values) / eps - lam)
    c = g.fft(rhs) / (1.0 + tau * eps * g.mu)
    out = g.ifft(c)
    m0 = np.mean(u.values)
    out = out - (np.mean(out) - m0)
    return ScalarField(g, out)


def _mean_ratio(u: ScalarField) -> float:
    n = u.norm()
    return 0.0 if n == 0 else abs(float(np.mean(u.values))) / n


def solve_critical(u0: ScalarField, eps: float, p: DoubleWellPotential,
                   cfg: FlowConfig | None = None, record_history: bool = True) -> CriticalPoint:
    """Descend the energy within mean-zero fields until the constrained gradient is small.

    Parameters
    ----------
    u0 : ScalarField
        Initial guess; its mean is removed first.
    eps : float
        Interface width parameter.
    p : DoubleWellPotential
    cfg : FlowConfig, optional
        Defaults resolve to ``tau = eps`` and ``tol = 1e-8 sqrt(Vol)``.

    Returns
    -------
    CriticalPoint
        ``converged`` is False if ``max_iters`` ran out; ``tau_underflow`` marks
        a step size that shrank below ``min_tau``. ``history`` holds one
        ``(energy, residual, tau, mean_ratio)`` row per accepted iterate.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    cfg = (cfg or FlowConfig()).resolved(eps, u0.grid.total_volume)
    u = ScalarField(u0.grid, u0.values - np.mean(u0.values))
    e = energy(u, eps, p).total
    res = constrained_gradient(u, eps, p).norm()
    tau = cfg.tau
    hist = [(e, res, tau, _mean_ratio(u))] if record_history else []
    max_ratio = _mean_ratio(u)
    it = 0
    underflow = False
    while res > cfg.tol and it < cfg.max_iters:
        cand = flow_step(u, eps, p, tau)
        e_new = energy(cand, eps, p).total
        if e_new > e + ENERGY_ROUNDOFF * max(1.0, abs(e)):
            tau *= cfg.backtrack_factor
            if tau < cfg.min_tau:
                underflow = True
                break
            continue
        u, e = cand, e_new
        it += 1
        res = constrained_gradient(u, eps, p).norm()
        ratio = _mean_ratio(u)
        max_ratio = max(max_ratio, ratio)
        if record_history:
            hist.append((e, res, tau, ratio))
        tau = min(cfg.tau, tau * cfg.grow)
    converged = res <= cfg.tol
    if not converged:
        log.warning("flow stopped at residual %.3e after %d steps (tol %.1e)", res, it, cfg.tol)
    idx = None
    near_critical = res <= 1e-6 * np.sqrt(u.grid.total_volume)
    if cfg.compute_index and near_critical and u.grid.size <= cfg.index_max_points:
        try:
            idx = constrained_index(u, eps, p, min(cfg.index_modes, u.grid.size - 2))
        except IndexComputationError as exc:
            log.warning("index estimate unavailable: %s", exc)
    return CriticalPoint(
        u=u, epsilon=float(eps), lam=lagrange_multiplier(u, eps, p), residual=float(res),
        energy=energy(u, eps, p), index_estimate=idx, iterations=it, converged=converged,
        tau_underflow=underflow, history=hist, max_mean_ratio=max_ratio,
    )
