"""Checks on converged critical points: interface defect, mollifier bounds, multiplier identity, sup norm."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .energy import energy, first_variation, lagrange_multiplier
from .grid import ScalarField, gradient, integrate, l2_inner, laplacian, mean, mollify, poisson_solve
from .potentials import DoubleWellPotential, phi_primitive

DEGENERATE_PAIRING = 1e-8


def interface_defect(u: ScalarField) -> float:
    """``int (|u| - 1)^2``."""
    return float(u.grid.integrate_array((np.abs(u.values) - 1.0) ** 2))


@dataclass(frozen=True)
class DefectReport:
    eps: float
    defect: float
    energy: float
    ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def defect_report(u: ScalarField, eps: float, p: DoubleWellPotential) -> DefectReport:
    """Interface defect relative to ``sqrt(eps) (1 + E_eps(u))``."""
    d = interface_defect(u)
    e = energy(u, eps, p).total
    return DefectReport(float(eps), d, e, d / (np.sqrt(eps) * (1.0 + e)))


def defect_ratio_stable(reports, factor: float = 2.0) -> bool:
    """True when no ratio along the sequence exceeds ``factor`` times the first one."""
    ratios = [r.ratio if isinstance(r, DefectReport) else float(r) for r in reports]
    return bool(max(ratios) <= factor * ratios[0])


@dataclass(frozen=True)
class MultiplierCertificate:
    """Multiplier identity tested against ``g = grad psi . grad u``.

    ``psi`` solves ``-Lap psi = u_eta - mean(u_eta)``; ``pairing`` is
    ``int grad psi . grad u`` and ``rhs`` is the inner product of the first
    variation with ``g``.
    """

    eps: float
    eta: float
    lam: float
    pairing: float
    rhs: float
    identity_residual: float
    pairing_lower_ok: bool
    degenerate: bool
    psi_c2_norm: dict
    volume: float

    @property
    def identity_ok(self) -> bool:
        return (not self.degenerate) and self.identity_residual <= 1e-8 * (1.0 + abs(self.lam * self.pairing))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["identity_ok"] = self.identity_ok
        return d


def multiplier_certificate(u: ScalarField, eps: float, p: DoubleWellPotential,
                           eta: float | None = None) -> MultiplierCertificate:
    """Assemble the multiplier identity and the pairing lower bound for ``u``.

    Parameters
    ----------
    u : ScalarField
        A (near-)critical mean-zero field.
    eps : float
    p : DoubleWellPotential
    eta : float, optional
        Mollification length; defaults to ``eps``.

    Returns
    -------
    MultiplierCertificate
        ``identity_residual = |lambda * pairing - rhs|``, which equals the inner
        product of the constrained gradient with ``g``. ``degenerate`` is set
        when ``|pairing| < 1e-8``.
    """
    eta = float(eps if eta is None else eta)
    if not eta > 0:
        raise ValueError("eta must be positive")
    um = mollify(u, eta)
    src = um - mean(um)
    psi = poisson_solve(src)
    gpsi, gu = gradient(psi), gradient(u)
    g = ScalarField(u.grid, sum(a.values * b.values for a, b in zip(gpsi, gu)))
    pairing = integrate(g)
    lam = lagrange_multiplier(u, eps, p)
    rhs = l2_inner(first_variation(u, eps, p), g)
    vol = u.grid.total_volume
    grad_max = float(np.max(np.sqrt(sum(a.values**2 for a in gpsi))))
    norms = {"psi": psi.max_abs(), "grad_psi": grad_max, "lap_psi": laplacian(psi).max_abs()}
    return MultiplierCertificate(
        eps=float(eps), eta=eta, lam=lam, pairing=pairing, rhs=rhs,
        identity_residual=abs(lam * pairing - rhs), pairing_lower_ok=bool(pairing >= 0.25 * vol),
        degenerate=bool(abs(pairing) < DEGENERATE_PAIRING), psi_c2_norm=norms, volume=vol,
    )


@dataclass(frozen=True)
class MollifierReport:
    eta: float
    l2_deviation_over_eta: float
    phi_total_variation: float
    ratio: float
    mean_drift: float

    def to_dict(self) -> dict:
        return asdict(self)


def mollifier_bounds(u: ScalarField, eta: float, p: DoubleWellPotential) -> MollifierReport:
    """``|u_eta - u|^2 / eta`` against the L^1 norm of ``grad Phi(u)``.

    ``mean_drift`` is the change of the mean under mollification, which the
    heat-semigroup mollifier keeps at zero up to rounding.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    um = mollify(u, eta)
    dev = um - u
    l2 = l2_inner(dev, dev) / eta
    w = ScalarField(u.grid, phi_primitive(p, u.values))
    gw = gradient(w)
    tv = float(u.grid.integrate_array(np.sqrt(sum(a.values**2 for a in gw))))
    ratio = l2 / tv if tv > 0 else float("inf") if l2 > 0 else 0.0
    return MollifierReport(float(eta), float(l2), tv, float(ratio), mean(um) - mean(u))


def linf_check(u: ScalarField, p: DoubleWellPotential) -> tuple[float, bool]:
    """``(max |u|, max |u| <= beta + 1e-9)``."""
    m = u.max_abs()
    return m, bool(m <= p.beta + 1e-9)
