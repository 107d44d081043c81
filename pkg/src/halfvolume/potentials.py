"""Even double-well potentials and the quantities derived from them.

A potential carries its value and first two derivatives as vectorised
callables together with the structural constants used by the growth and
convexity conditions (``alpha``, ``kappa``, ``beta``, ``q``, ``c1``, ``c2``).
"""
from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, optimize

Q_MIN, Q_MAX = 2.0, 11.0 / 5.0

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DoubleWellPotential:
    """An even double-well potential ``W`` with its structural constants.

    Instances are immutable. Construction does not validate anything, so
    deliberately broken potentials can be built and fed to
    :func:`verify_potential`; use :func:`build_glued_quartic` for a potential
    that is known to be admissible.
    """

    w: ArrayFn
    w1: ArrayFn
    w2: ArrayFn
    alpha: float
    kappa: float
    beta: float
    q: float
    c1: float
    c2: float
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False, hash=False)
    # points where w2 may jump; finite-difference checks skip their neighbourhood
    glue_points: tuple = ()

    def __call__(self, x):
        return self.w(np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {
            "potential": self.name,
            **self.params,
            "alpha": self.alpha,
            "kappa": self.kappa,
            "beta": self.beta,
            "q": self.q,
            "c1": self.c1,
            "c2": self.c2,
        }


def build_glued_quartic(q: float = 2.1, beta: float = 5.0) -> DoubleWellPotential:
    """Quartic ``(1 - x^2)^2 / 4`` on ``[-beta, beta]`` with ``c|x|^q + d`` tails.

    The tail constants are fixed by matching value and slope at ``+-beta``,
    which makes the potential C^1 everywhere and smooth away from ``+-beta``.

    Raises
    ------
    ValueError
        If ``q`` is outside ``(2, 11/5)`` or ``beta <= 1``.
    """
    q = float(q)
    beta = float(beta)
    if not (Q_MIN < q < Q_MAX):
        raise ValueError(f"tail exponent q={q} out of range: need 2 < q < 11/5")
    if not beta > 1.0:
        raise ValueError(f"glue threshold beta={beta} must exceed 1")

    c = (beta**2 - 1.0) * beta ** (2.0 - q) / q
    d = (beta**2 - 1.0) ** 2 / 4.0 - c * beta**q

    def w(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        core = (1.0 - x * x) ** 2 / 4.0
        tail = c * np.power(np.maximum(ax, beta), q) + d
        return np.where(ax <= beta, core, tail)

    def w1(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        core = x * (x * x - 1.0)
        tail = np.sign(x) * c * q * np.power(np.maximum(ax, beta), q - 1.0)
        return np.where(ax <= beta, core, tail)

    def w2(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        core = 3.0 * x * x - 1.0
        tail = c * q * (q - 1.0) * np.power(np.maximum(ax, beta), q - 2.0)
        return np.where(ax <= beta, core, tail)

    alpha = 0.8
    kappa = min(3.0 * alpha**2 - 1.0, (q - 1.0) * (beta**2 - 1.0))
    # w/|x|^q is monotone on [beta, inf) between its value at beta and c;
    # |w'|/|x|^(q-1) is the constant c*q
    w_beta = (beta**2 - 1.0) ** 2 / 4.0
    ratios = (w_beta / beta**q, c, c * q)
    return DoubleWellPotential(
        w=w,
        w1=w1,
        w2=w2,
        alpha=alpha,
        kappa=kappa,
        beta=beta,
        q=q,
        c1=0.999 * min(ratios),
        c2=1.001 * max(ratios),
        name="glued_quartic",
        params={"q": q, "beta": beta, "tail_c": c, "tail_d": d},
        glue_points=(-beta, beta),
    )


def pure_quartic() -> DoubleWellPotential:
    """The quartic ``(1 - x^2)^2 / 4`` on all of R (quartic tail growth)."""
    return DoubleWellPotential(
        w=lambda x: (1.0 - np.asarray(x, float) ** 2) ** 2 / 4.0,
        w1=lambda x: np.asarray(x, float) * (np.asarray(x, float) ** 2 - 1.0),
        w2=lambda x: 3.0 * np.asarray(x, float) ** 2 - 1.0,
        alpha=0.8,
        kappa=0.92,
        beta=2.0,
        q=4.0,
        c1=0.14,
        c2=1.0,
        name="pure_quartic",
    )


def scale_potential(p: DoubleWellPotential, factor: float) -> DoubleWellPotential:
    """Return ``factor * W`` with the constants rescaled accordingly."""
    f = float(factor)
    if f <= 0:
        raise ValueError("scale factor must be positive")
    return dataclasses.replace(
        p,
        w=lambda x, g=p.w: f * g(x),
        w1=lambda x, g=p.w1: f * g(x),
        w2=lambda x, g=p.w2: f * g(x),
        kappa=f * p.kappa,
        c1=f * p.c1,
        c2=f * p.c2,
        name=f"{p.name}*{f:g}",
    )


POTENTIALS = {
    "glued_quartic": build_glued_quartic,
    "pure_quartic": lambda **kw: pure_quartic(),
}


def make_potential(name: str = "glued_quartic", **kwargs) -> DoubleWellPotential:
    try:
        factory = POTENTIALS[name]
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}") from None
    return factory(**kwargs)


# ---------------------------------------------------------------------------
# verification


@dataclass
class ConditionResult:
    passed: bool
    worst_violation: float
    note: str = ""


@dataclass
class PotentialReport:
    """Outcome of :func:`verify_potential`, keyed by condition label."""

    conditions: dict[str, ConditionResult]
    grid: dict

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, c in self.conditions.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "failed": self.failed,
            "conditions": {k: dataclasses.asdict(v) for k, v in self.conditions.items()},
            "grid": self.grid,
        }


CONDITIONS = ("i", "ii", "iii", "iv", "v", "vi", "vii")


def _central_rel_error(f, df, x, h):
    fd = (f(x + h) - f(x - h)) / (2.0 * h)
    exact = df(x)
    return np.abs(fd - exact) / np.maximum(np.abs(exact), 1.0)


def verify_potential(p: DoubleWellPotential, n_samples: int = 10_000, x_max: float | None = None,
                     fd_rtol: float = 1e-6) -> PotentialReport:
    """Check conditions (i)-(vii) on a symmetric sample grid.

    Failures are reported, never raised. ``x_max`` defaults to ``4 * beta``.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    if x_max is None:
        x_max = 4.0 * p.beta
    if not x_max > p.beta:
        raise ValueError("x_max must exceed beta")

    base = np.linspace(-x_max, x_max, n_samples)
    special = np.array([0.0, 1.0, -1.0, p.alpha, -p.alpha, p.beta, -p.beta])
    x = np.unique(np.concatenate([base, special]))
    w, w1, w2 = p.w(x), p.w1(x), p.w2(x)
    res: dict[str, ConditionResult] = {}

    # (i) finite, non-negative, C^1, derivatives consistent
    h = 1e-5 * np.maximum(1.0, np.abs(x))
    near_glue = np.zeros_like(x, dtype=bool)
    for g in p.glue_points:
        near_glue |= np.abs(x - g) <= 4.0 * h
    err1 = _central_rel_error(p.w, p.w1, x[~near_glue], h[~near_glue])
    err2 = _central_rel_error(p.w1, p.w2, x[~near_glue], h[~near_glue])
    jumps = [0.0]
    for g in p.glue_points:
        t = 1e-9 * max(1.0, abs(g))
        jumps.append(abs(float(p.w(g + t) - p.w(g - t))) / max(1.0, abs(float(p.w(g)))))
        jumps.append(abs(float(p.w1(g + t) - p.w1(g - t))) / max(1.0, abs(float(p.w1(g)))))
    finite = bool(np.all(np.isfinite(w)) and np.all(np.isfinite(w1)) and np.all(np.isfinite(w2)))
    neg = float(max(0.0, -np.min(w)))
    worst = float(max(np.max(err1, initial=0), np.max(err2, initial=0), max(jumps), neg))
    res["i"] = ConditionResult(
        finite and neg == 0.0 and worst <= fd_rtol,
        worst,
        "non-negativity, C^1 glue and finite-difference consistency of w1, w2",
    )

    # (ii) evenness
    odd_part = np.abs(p.w(x) - p.w(-x))
    res["ii"] = ConditionResult(bool(np.all(odd_part <= 1e-12 * (1.0 + np.abs(w)))), float(odd_part.max()))

    # (iii) non-degenerate minima at +-1, positive elsewhere
    wells = np.abs(p.w(np.array([-1.0, 1.0])))
    off = np.abs(np.abs(x) - 1.0) > 0
    min_off = float(np.min(w[off]))
    curv = float(np.min(p.w2(np.array([-1.0, 1.0]))))
    ok3 = bool(np.all(wells == 0.0) and min_off > 0.0 and curv > 0.0)
    res["iii"] = ConditionResult(ok3, float(max(wells.max(), max(0.0, -min_off), max(0.0, -curv))),
                                 f"W(+-1)={wells.tolist()}, min W off wells={min_off:.3g}, W''(1)={curv:.3g}")

    # (iv) non-degenerate maximum at 0
    w0, d0, c0 = float(p.w(0.0)), float(p.w1(0.0)), float(p.w2(0.0))
    ok4 = w0 > 0.0 and abs(d0) <= 1e-12 and c0 < 0.0
    res["iv"] = ConditionResult(bool(ok4), float(max(max(0.0, -w0), abs(d0), max(0.0, c0))),
                                f"W(0)={w0:.6g}, W'(0)={d0:.3g}, W''(0)={c0:.3g}")

    # (v) monotonicity pattern
    worst5 = 0.0
    ok5 = True
    for lo, hi, sign in ((-1.0, 0.0, 1), (1.0, np.inf, 1), (0.0, 1.0, -1), (-np.inf, -1.0, -1)):
        seg = x[(x > lo) & (x < hi)]
        if seg.size < 2:
            continue
        dw = np.diff(p.w(seg)) * sign
        if np.any(dw <= 0):
            ok5 = False
            worst5 = max(worst5, float(-dw.min()))
    res["v"] = ConditionResult(ok5, worst5)

    # (vi) uniform convexity away from the origin
    outer = np.abs(x) >= p.alpha
    gap = float(np.min(w2[outer]) - p.kappa)
    ok6 = 0.0 < p.alpha < 1.0 and p.kappa > 0.0 and gap >= 0.0
    res["vi"] = ConditionResult(bool(ok6), float(max(0.0, -gap)),
                                f"alpha={p.alpha}, kappa={p.kappa:.4g}, min W'' on |x|>=alpha = {gap + p.kappa:.4g}")

    # (vii) power-law tails
    notes = []
    ok7 = True
    worst7 = 0.0
    if not (Q_MIN < p.q < Q_MAX):
        ok7 = False
        notes.append(f"tail exponent q={p.q} outside (2, 11/5)")
        worst7 = max(worst7, min(abs(p.q - Q_MIN), abs(p.q - Q_MAX)))
    if not (0.0 < p.c1 < p.c2) or not p.beta > 1.0:
        ok7 = False
        notes.append("need 0 < c1 < c2 and beta > 1")
    tail = np.abs(x) >= p.beta
    if np.any(tail):
        ax = np.abs(x[tail])
        bounds = (
            (w[tail], ax**p.q),
            (np.abs(w1[tail]), ax ** (p.q - 1.0)),
        )
        for val, ref in bounds:
            lo_v = p.c1 * ref - val
            hi_v = val - p.c2 * ref
            v = float(max(lo_v.max(), hi_v.max()))
            if v > 0:
                ok7 = False
                worst7 = max(worst7, v)
                notes.append("tail bound c1|x|^q <= W <= c2|x|^q (or derivative) violated")
    res["vii"] = ConditionResult(ok7, worst7, "; ".join(dict.fromkeys(notes)))

    grid = {"n_samples": int(n_samples), "x_max": float(x_max), "n_points": int(x.size)}
    return PotentialReport(res, grid)


# ---------------------------------------------------------------------------
# sigma and the primitive Phi


def _sqrt_half_w(p: DoubleWellPotential):
    return lambda s: float(np.sqrt(max(float(p.w(s)), 0.0) / 2.0))


@functools.lru_cache(maxsize=32)
def sigma(p: DoubleWellPotential) -> float:
    """Energy constant ``int_{-1}^{1} sqrt(W/2)``: the cost of one transition is ``2 sigma``."""
    val, _ = integrate.quad(_sqrt_half_w(p), -1.0, 1.0, points=[0.0], epsabs=1e-10, epsrel=1e-12,
                            limit=200)
    return float(val)


def _breaks(p: DoubleWellPotential, lo: float, hi: float) -> list[float]:
    pts = [t for t in (-p.beta, -1.0, 0.0, 1.0, p.beta) if lo < t < hi]
    return [lo, *pts, hi]


def _phi_scalar(p: DoubleWellPotential, s: float) -> float:
    if s == 0.0:
        return 0.0
    lo, hi = sorted((0.0, s))
    f = _sqrt_half_w(p)
    nodes = _breaks(p, lo, hi)
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        total += integrate.quad(f, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    return total if s > 0 else -total


@functools.lru_cache(maxsize=32)
def _phi_table(p: DoubleWellPotential, s_max: float, per_piece: int = 4001):
    nodes = _breaks(p, 0.0, s_max)
    xs, ys = [np.array([0.0])], [np.array([0.0])]
    offset = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        t = np.linspace(a, b, per_piece)
        g = np.sqrt(np.maximum(p.w(t), 0.0) / 2.0)
        cum = integrate.cumulative_simpson(g, x=t, initial=0.0) + offset
        offset = float(cum[-1])
        xs.append(t[1:])
        ys.append(cum[1:])
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    dy = np.sqrt(np.maximum(p.w(x), 0.0) / 2.0)
    return interpolate.CubicHermiteSpline(x, y, dy)


def phi_primitive(p: DoubleWellPotential, s):
    """``Phi(s) = int_0^s sqrt(W/2)``; odd in ``s``.

    Scalars use adaptive quadrature; arrays go through a cached Hermite table
    (accurate to roughly 1e-10 on the quartic core).
    """
    if np.ndim(s) == 0:
        return _phi_scalar(p, float(s))
    s = np.asarray(s, dtype=float)
    m = float(np.max(np.abs(s), initial=0.0))
    # quantise the table range so repeated calls share a table
    s_max = float(max(2.0 * p.beta, 2.0 ** np.ceil(np.log2(max(m, 1.0) * 1.01))))
    table = _phi_table(p, s_max)
    return np.sign(s) * table(np.abs(s))


def phi_quadratic_constant(p: DoubleWellPotential, n_pairs: int = 10_000, x_max: float | None = None,
                           seed: int = 0, n_polish: int = 5) -> float:
    """Empirical constant in ``|x - y|^2 <= C |Phi(x) - Phi(y)|`` over ``[-x_max, x_max]^2``.

    A sample maximum over random pairs, polished by bounded local ascent from
    the best few pairs.

    Raises
    ------
    ValueError
        If a sampled pair has ``Phi(x) == Phi(y)`` with ``x != y``.
    """
    if n_pairs < 10_000:
        raise ValueError("n_pairs must be at least 1e4")
    if x_max is None:
        x_max = p.beta
    if x_max < p.beta:
        raise ValueError("x_max must be at least beta")
    rng = np.random.Generator(np.random.Philox(seed))
    xy = rng.uniform(-x_max, x_max, size=(n_pairs, 2))
    x, y = xy[:, 0], xy[:, 1]
    keep = x != y
    x, y = x[keep], y[keep]
    dphi = np.abs(phi_primitive(p, x) - phi_primitive(p, y))
    if np.any(dphi == 0.0):
        i = int(np.argmax(dphi == 0.0))
        raise ValueError(f"Phi not strictly monotone: Phi({x[i]}) == Phi({y[i]})")
    ratio = (x - y) ** 2 / dphi
    best = float(ratio.max())

    def neg_ratio(v):
        a, b = v
        d = abs(float(phi_primitive(p, np.array([a]))[0] - phi_primitive(p, np.array([b]))[0]))
        if d == 0.0:
            return 0.0
        return -((a - b) ** 2) / d

    for i in np.argsort(-ratio)[:n_polish]:
        r = optimize.minimize(neg_ratio, [x[i], y[i]], method="L-BFGS-B",
                              bounds=[(-x_max, x_max), (-x_max, x_max)])
        best = max(best, -float(r.fun))
    return best
