"""Odd sphere families of fields, their energy maxima, and width estimates built from them.

A family is indexed by unit vectors ``a`` in ``R^{p+1}``. Its slice is an odd
profile applied to ``sum_i a_i phi_i / delta`` for a fixed set of Laplace
eigenfunctions ``phi_i``. Constrained families shift the level of the profile
so each slice has mean zero. Since slices are odd in ``a`` and never vanish,
each family is an admissible competitor for the min-max levels, and its
maximal energy is an upper bound for them.
"""
from __future__ import annotations

import csv
import io as _io
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .energy import constrained_index, energy, energy_values, first_variation, lagrange_multiplier
from .grid import ScalarField, SpectralBasis, TorusGrid
from .potentials import DoubleWellPotential, sigma
from .solver import FlowConfig

log = logging.getLogger(__name__)

PROFILES = ("tanh", "clamp")
MIN_SLICE_NORM = 1e-8


class DegenerateSliceError(RuntimeError):
    """A family slice has (nearly) zero L^2 norm; ``param`` identifies it."""

    def __init__(self, param):
        super().__init__(f"degenerate slice at a = {np.asarray(param).tolist()}")
        self.param = np.asarray(param)


class MissingRowError(KeyError):
    pass


def _profile(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Profile values and derivatives."""
    if name == "tanh":
        t = np.tanh(z)
        return t, 1.0 - t * t
    if name == "clamp":
        inside = np.abs(z) < 1.0
        return np.clip(z, -1.0, 1.0), inside.astype(float)
    raise ValueError(f"unknown profile {name!r}; choose from {PROFILES}")


def _combine(coeffs: np.ndarray, modes: np.ndarray) -> np.ndarray:
    """``sum_i coeffs[..., i] * modes[i]`` with a fixed summation order."""
    nb = coeffs.shape[:-1]
    out = np.zeros(nb + modes.shape[1:])
    extra = (slice(None),) * len(nb) + (None,) * (modes.ndim - 1)
    for i in range(modes.shape[0]):
        out += coeffs[(...,) + (i,)][extra] * modes[i]
    return out


def level_shift(f: np.ndarray, delta: float, profile: str = "tanh", ndim: int | None = None,
                max_iter: int = 200) -> np.ndarray:
    """Solve ``mean(profile((f - s)/delta)) = 0`` for ``s`` (batched over leading axes).

    Bracketed Newton iteration on ``[min f, max f]``, where the mean changes sign.
    """
    ndim = f.ndim if ndim is None else ndim
    axes = tuple(range(-ndim, 0))
    lo = np.min(f, axis=axes)
    hi = np.max(f, axis=axes)
    s = np.zeros_like(lo)
    s = np.clip(s, lo, hi)
    expand = (...,) + (None,) * ndim
    for _ in range(max_iter):
        val, der = _profile(profile, (f - s[expand]) / delta)
        m = np.mean(val, axis=axes)
        dm = -np.mean(der, axis=axes) / delta
        done = (np.abs(m) <= 1e-15) | (hi - lo <= 1e-15 * np.maximum(1.0, np.abs(s)))
        if np.all(done):
            break
        lo = np.where(m > 0, s, lo)
        hi = np.where(m < 0, s, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = s - m / dm
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        s = np.where(done, s, np.where(ok, newton, 0.5 * (lo + hi)))
    return s


@dataclass(frozen=True)
class SweepoutFamily:
    """An odd family of fields over the unit sphere ``S^p``.

    Parameters
    ----------
    grid : TorusGrid
    p : int
        Sphere dimension; the family uses ``p + 1`` modes.
    constrained : bool
        If True all modes are non-constant and slices are level-shifted to
        mean zero; otherwise the first mode is the constant.
    mode_ids : tuple of int
        Indices into ``SpectralBasis(grid)`` (index 0 is the constant).
    delta : float
        Sharpness length of the profile.
    profile : {"tanh", "clamp"}
    """

    grid: TorusGrid
    p: int
    constrained: bool
    mode_ids: tuple
    delta: float
    profile: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "mode_ids", tuple(int(i) for i in self.mode_ids))
        if self.p < 0:
            raise ValueError("p must be non-negative")
        if len(self.mode_ids) != self.p + 1:
            raise ValueError(f"need {self.p + 1} modes, got {len(self.mode_ids)}")
        if len(set(self.mode_ids)) != len(self.mode_ids):
            raise ValueError("mode ids must be distinct")
        if self.constrained and 0 in self.mode_ids:
            raise ValueError("constrained families use non-constant modes only")
        if not self.constrained and self.mode_ids[0] != 0:
            raise ValueError("unconstrained families start with the constant mode")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    @classmethod
    def lowest(cls, grid: TorusGrid, p: int, constrained: bool, delta: float,
               profile: str = "tanh") -> "SweepoutFamily":
        ids = tuple(range(1, p + 2)) if constrained else tuple(range(0, p + 1))
        return cls(grid, p, constrained, ids, delta, profile)

    def on_grid(self, grid: TorusGrid) -> "SweepoutFamily":
        """Same modes and sharpness sampled on another resolution of the same torus."""
        return replace(self, grid=grid, mode_ids=self._ids_on(grid))

    def _ids_on(self, grid: TorusGrid) -> tuple:
        src = _basis(self.grid, max(self.mode_ids))
        dst = _basis(grid, 4 * max(self.mode_ids) + 8)
        lookup = {(m.k, m.kind): i for i, m in enumerate(dst.modes)}
        try:
            return tuple(lookup[(src.modes[i].k, src.modes[i].kind)] for i in self.mode_ids)
        except KeyError as exc:
            raise ValueError(f"mode {exc} is not resolved on grid {grid.res}") from exc

    @property
    def modes(self) -> np.ndarray:
        return _mode_stack(self.grid, self.mode_ids)

    def describe(self) -> dict:
        b = _basis(self.grid, max(self.mode_ids))
        return {
            "p": self.p,
            "constrained": self.constrained,
            "delta": self.delta,
            "profile": self.profile,
            "modes": [[list(b.modes[i].k), b.modes[i].kind] for i in self.mode_ids],
        }

    # evaluation ---------------------------------------------------------
    def slices(self, params: np.ndarray) -> np.ndarray:
        """Slice values for a batch of unit vectors ``params`` of shape ``(B, p+1)``."""
        a = np.atleast_2d(np.asarray(params, dtype=float))
        sgn = _canonical_sign(a)
        u = self._raw(a * sgn[:, None])
        return u * sgn[(...,) + (None,) * self.grid.dim]

    def _raw(self, a: np.ndarray, with_derivative: bool = False):
        g = self.grid
        f = _combine(a, self.modes)
        if self.constrained:
            s = level_shift(f, self.delta, self.profile, g.dim)
            f = f - s[(...,) + (None,) * g.dim]
        u, du = _profile(self.profile, f / self.delta)
        if self.constrained:
            u = u - g.mean_array(u)[(...,) + (None,) * g.dim]
        return (u, du) if with_derivative else u

    def value_and_grad(self, a: np.ndarray, eps: float, pot: DoubleWellPotential):
        """Normalized energy at ``a/|a|`` and its gradient with respect to ``a``."""
        g = self.grid
        nrm = float(np.linalg.norm(a))
        b = np.asarray(a, dtype=float) / nrm
        u, du = self._raw(b[None], with_derivative=True)
        u, du = u[0], du[0]
        field_u = ScalarField(g, u)
        scale = 2.0 * sigma(pot)
        val = energy(field_u, eps, pot).total / scale
        fv = first_variation(field_u, eps, pot).values
        modes = self.modes
        if self.constrained:
            wsum = float(np.sum(du))
            ds = np.array([np.sum(du * ph) for ph in modes]) / wsum if wsum > 0 else np.zeros(len(modes))
        else:
            ds = np.zeros(len(modes))
        grad = np.array([np.sum(fv * du * (ph - d)) for ph, d in zip(modes, ds)])
        grad *= g.cell_volume / self.delta / scale
        grad = (grad - b * float(b @ grad)) / nrm
        return val, grad


def _canonical_sign(a: np.ndarray) -> np.ndarray:
    """+1 or -1 per row so that the first non-zero entry of ``sign * a`` is positive."""
    nz = a != 0
    first = np.argmax(nz, axis=1)
    lead = a[np.arange(a.shape[0]), first]
    return np.where(lead < 0, -1.0, 1.0)


_BASIS_CACHE: dict = {}


def _basis(grid: TorusGrid, need: int) -> SpectralBasis:
    key = grid
    b = _BASIS_CACHE.get(key)
    if b is None or len(b.modes) <= need:
        b = SpectralBasis(grid, max_modes=max(64, 2 * need + 2))
        if len(b.modes) <= need:
            raise ValueError(f"grid {grid.res} resolves only {len(b.modes) - 1} non-constant modes")
        _BASIS_CACHE[key] = b
    return b


_MODE_CACHE: dict = {}


def _mode_stack(grid: TorusGrid, ids: tuple) -> np.ndarray:
    key = (grid, ids)
    arr = _MODE_CACHE.get(key)
    if arr is None:
        b = _basis(grid, max(ids))
        arr = np.stack([b.mode_array(i) for i in ids])
        arr.setflags(write=False)
        if len(_MODE_CACHE) > 256:
            _MODE_CACHE.clear()
        _MODE_CACHE[key] = arr
    return arr


def family_slice(fam: SweepoutFamily, a) -> ScalarField:
    """The slice of ``fam`` at the unit vector ``a``.

    Raises
    ------
    ValueError
        If ``a`` is not a unit vector.
    DegenerateSliceError
        If the slice has L^2 norm below ``1e-8``.
    """
    a = np.asarray(a, dtype=float).ravel()
    if a.size != fam.p + 1:
        raise ValueError(f"parameter has {a.size} entries, family needs {fam.p + 1}")
    if abs(np.linalg.norm(a) - 1.0) > 1e-12:
        raise ValueError("parameter must be a unit vector")
    u = ScalarField(fam.grid, fam.slices(a[None])[0])
    if u.norm() < MIN_SLICE_NORM:
        raise DegenerateSliceError(a)
    return u


# ---------------------------------------------------------------------------
# sphere sampling and family maxima


@dataclass(frozen=True)
class SphereSampler:
    """Scrambled Sobol points pushed to the sphere through the Gaussian quantile.

    ``count`` is the requested number of antipodal pairs; it is rounded up to a
    power of two. Each sample stands for the pair ``{a, -a}``.
    """

    count: int | None = None
    seed: int = 0
    factor: int = 100

    def n_points(self, p: int) -> int:
        want = self.count if self.count is not None else self.factor * 2**p
        want = max(want, self.factor * 2**p)
        return 1 << math.ceil(math.log2(want))

    def points(self, p: int) -> np.ndarray:
        d = p + 1
        if d == 1:
            return np.ones((1, 1))
        n = self.n_points(p)
        rng = np.random.Generator(np.random.Philox(self.seed))
        raw = qmc.Sobol(d, scramble=True, seed=rng).random_base2(int(math.log2(n)))
        raw = np.clip(raw, 1e-15, 1.0 - 1e-15)
        a = norm.ppf(raw)
        return a / np.linalg.norm(a, axis=1, keepdims=True)


@dataclass
class FamilyMax:
    value: float
    argmax: np.ndarray
    screened_value: float
    ascent_converged: bool
    grad_norm: float
    n_samples: int


def _screen(fam: SweepoutFamily, params: np.ndarray, eps: float, pot: DoubleWellPotential,
            batch: int = 64) -> np.ndarray:
    scale = 2.0 * sigma(pot)
    g = fam.grid
    out = np.empty(len(params))
    for i in range(0, len(params), batch):
        u = fam.slices(params[i : i + batch])
        norms = np.sqrt(g.integrate_array(u * u))
        bad = np.flatnonzero(norms < MIN_SLICE_NORM)
        if bad.size:
            raise DegenerateSliceError(params[i + bad[0]])
        d, w = energy_values(g, u, eps, pot)
        out[i : i + batch] = (d + w) / scale
    return out


def family_max(fam: SweepoutFamily, eps: float, pot: DoubleWellPotential,
               sampler: SphereSampler | None = None, screen_grid: TorusGrid | None = None,
               n_polish: int = 3, gtol: float = 1e-9) -> FamilyMax:
    """Maximal normalized energy over the family.

    Parameters
    ----------
    fam : SweepoutFamily
        Family on the evaluation grid.
    eps : float
    pot : DoubleWellPotential
    sampler : SphereSampler, optional
        Half-sphere sample (evenness of the energy covers the antipodes).
    screen_grid : TorusGrid, optional
        Coarser grid used to rank the samples; defaults to the family grid.
    n_polish : int
        Number of top-ranked samples refined by gradient ascent on the sphere.
    gtol : float
        Gradient tolerance of the ascent.

    Returns
    -------
    FamilyMax
        The maximum over re-evaluated starts and ascent results. Ties keep the
        lowest sample index. ``ascent_converged`` is False when the tangential
        gradient at the reported maximizer exceeds ``1e-8``.
    """
    sampler = sampler or SphereSampler()
    params = sampler.points(fam.p)
    coarse = fam if screen_grid is None or screen_grid == fam.grid else fam.on_grid(screen_grid)
    screened = _screen(coarse, params, eps, pot)
    order = np.argsort(-screened, kind="stable")
    if fam.p == 0:
        v, _ = fam.value_and_grad(params[0], eps, pot)
        return FamilyMax(float(v), params[0].copy(), float(screened[0]), True, 0.0, 1)
    best_v, best_a, best_g = -np.inf, None, np.inf

    def consider(a):
        nonlocal best_v, best_a, best_g
        v, gr = fam.value_and_grad(a, eps, pot)
        if v > best_v:
            best_v, best_a, best_g = float(v), a / np.linalg.norm(a), float(np.linalg.norm(gr))

    for i in order[:n_polish]:
        a0 = params[i]
        consider(a0)
        res = minimize(lambda a: tuple(-x for x in fam.value_and_grad(a, eps, pot)), a0,
                       jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 500})
        consider(res.x)
    a = best_a * _canonical_sign(best_a[None])[0]
    return FamilyMax(best_v, a, float(screened[order[0]]), best_g <= 1e-8, best_g, len(params))


# ---------------------------------------------------------------------------
# width estimates


@dataclass(frozen=True)
class SearchConfig:
    """Search space for :func:`optimize_family`.

    ``deltas`` default to ``L_min * 2**(-j/2)`` for ``j = 0..8``. Mode sets are
    the lowest eigenfunctions plus up to ``max_mode_sets - 1`` alternative
    completions of the last (degenerate) eigenvalue shell, drawn from the lowest
    ``2(p+1)`` modes.
    """

    sides: tuple = (1.0, 1.0)
    res: int = 128
    screen_res: int = 64
    deltas: tuple | None = None
    max_mode_sets: int = 4
    n_polish: int = 3
    seed: int = 0
    sample_factor: int = 100
    gtol: float = 1e-9
    profile: str = "tanh"
    include_constrained: bool = True

    def grid(self) -> TorusGrid:
        return TorusGrid(tuple(self.sides), (self.res,) * len(self.sides))

    def screen_grid(self) -> TorusGrid:
        return TorusGrid(tuple(self.sides), (min(self.res, self.screen_res),) * len(self.sides))

    def delta_grid(self) -> tuple:
        if self.deltas is not None:
            return tuple(float(d) for d in self.deltas)
        lmin = min(self.sides)
        return tuple(lmin * 2.0 ** (-j / 2) for j in range(9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sides"] = list(self.sides)
        d["deltas"] = list(self.delta_grid())
        return d


def mode_sets(grid: TorusGrid, n: int, start: int = 1, limit: int = 4) -> list[tuple]:
    """Candidate sets of ``n`` non-constant mode ids.

    The first set is the ``n`` lowest modes; the others swap the members of the
    top eigenvalue shell for other modes among the lowest ``2n``.
    """
    if n == 0:
        return [()]
    b = _basis(grid, start + 2 * n)
    ev = b.eigenvalues
    lowest = tuple(range(start, start + n))
    top = ev[lowest[-1]]
    fixed = tuple(i for i in lowest if ev[i] < top - 1e-9 * max(1.0, top))
    r = n - len(fixed)
    pool = [i for i in range(start, start + 2 * n) if i not in fixed]
    out = [lowest]
    for combo in itertools.combinations(pool, r):
        cand = fixed + combo
        if cand not in out:
            out.append(cand)
        if len(out) >= limit:
            break
    return out


@dataclass
class WidthEstimate:
    """Upper-bound estimate of a normalized min-max level."""

    p: int
    eps: float
    constrained: bool
    value: float
    argmax_param: np.ndarray
    family: dict
    refined: bool = False
    refined_value: float | None = None
    lam: float | None = None
    index_estimate: int | None = None
    seed: int = 0
    ascent_converged: bool = True
    candidates: list = field(default_factory=list, repr=False)

    def to_row(self) -> dict:
        return {
            "p": self.p,
            "eps": self.eps,
            "constrained": self.constrained,
            "value": self.value,
            "refined_value": self.refined_value,
            "lambda": self.lam,
            "index_estimate": self.index_estimate,
            "seed": self.seed,
        }

    def build_family(self, grid: TorusGrid) -> SweepoutFamily:
        b = _basis(grid, 4 * (self.p + 2) + 8)
        lookup = {(m.k, m.kind): i for i, m in enumerate(b.modes)}
        ids = tuple(lookup[(tuple(k), kind)] for k, kind in self.family["modes"])
        return SweepoutFamily(grid, self.p, self.family["constrained"], ids,
                              self.family["delta"], self.family["profile"])


def _candidate_families(p: int, constrained: bool, grid: TorusGrid, search: SearchConfig):
    fams = []
    for delta in search.delta_grid():
        if constrained or search.include_constrained:
            for ids in mode_sets(grid, p + 1, 1, search.max_mode_sets):
                fams.append(SweepoutFamily(grid, p, True, ids, delta, search.profile))
        if not constrained:
            for ids in mode_sets(grid, p, 1, search.max_mode_sets):
                fams.append(SweepoutFamily(grid, p, False, (0,) + ids, delta, search.profile))
    return fams


def optimize_family(p: int, eps: float, pot: DoubleWellPotential, constrained: bool,
                    search: SearchConfig | None = None) -> WidthEstimate:
    """Smallest family maximum over the search space.

    For ``constrained=False`` the candidates include the constrained families
    with the same ``p`` (mean-zero families are admissible there as well), so
    the unconstrained estimate never exceeds the constrained one.

    Raises
    ------
    DegenerateSliceError
        If every candidate family has a degenerate slice.
    """
    search = search or SearchConfig()
    grid, coarse = search.grid(), search.screen_grid()
    sampler = SphereSampler(seed=search.seed, factor=search.sample_factor)
    best, cands, errors = None, [], []
    for fam in _candidate_families(p, constrained, grid, search):
        try:
            fm = family_max(fam, eps, pot, sampler, coarse, search.n_polish, search.gtol)
        except DegenerateSliceError as exc:
            errors.append(exc)
            continue
        cands.append((fam.describe(), fm.value))
        log.debug("p=%d delta=%.4g constrained=%s -> %.6f", p, fam.delta, fam.constrained, fm.value)
        if best is None or fm.value < best[1].value:
            best = (fam, fm)
    if best is None:
        raise errors[0] if errors else DegenerateSliceError(np.zeros(p + 1))
    fam, fm = best
    return WidthEstimate(p=p, eps=float(eps), constrained=constrained, value=fm.value,
                         argmax_param=fm.argmax, family=fam.describe(), seed=search.seed,
                         ascent_converged=fm.ascent_converged, candidates=cands)


def _relax(values: np.ndarray, grid: TorusGrid, eps: float, pot: DoubleWellPotential,
           tau: float, steps: int, constrained: bool) -> np.ndarray:
    """Batched semi-implicit descent steps (mean-preserving if constrained)."""
    axes = tuple(range(-grid.dim, 0))
    u = values.copy()
    for _ in range(steps):
        force = pot.w1(u) / eps
        if constrained:
            force = force - np.mean(force, axis=axes, keepdims=True)
        m0 = np.mean(u, axis=axes, keepdims=True)
        nxt = grid.ifft(grid.fft(u - tau * force) / (1.0 + tau * eps * grid.mu))
        if constrained:
            nxt = nxt - (np.mean(nxt, axis=axes, keepdims=True) - m0)
        u = nxt
    return u


def refine_argmax(est: WidthEstimate, cfg: FlowConfig | None, pot: DoubleWellPotential,
                  search: SearchConfig | None = None, rounds: int = 5, steps: int = 20,
                  n_params: int = 256) -> WidthEstimate:
    """Heuristically lower a width estimate by deforming the best family with descent.

    Each round pushes every sampled slice of the family through ``steps``
    descent steps (an odd, mean-preserving deformation) and re-takes the
    maximum over the samples. The best value seen, capped by ``est.value``, is
    stored as ``refined_value``. Sampled maxima are not certified bounds.
    """
    search = search or SearchConfig()
    cfg = (cfg or FlowConfig()).resolved(est.eps, float(np.prod(search.sides)))
    grid = search.grid()
    fam = est.build_family(grid)
    params = SphereSampler(count=n_params, seed=search.seed, factor=1).points(est.p)
    params = np.concatenate([est.argmax_param[None], params])
    u = fam.slices(params)
    scale = 2.0 * sigma(pot)
    best = est.value
    tau = 0.5 * cfg.tau
    for _ in range(rounds):
        nxt = _relax(u, grid, est.eps, pot, tau, steps, est.constrained)
        d0, w0 = energy_values(grid, u, est.eps, pot)
        d1, w1 = energy_values(grid, nxt, est.eps, pot)
        keep = (d1 + w1) <= (d0 + w0)
        u = np.where(keep[(...,) + (None,) * grid.dim], nxt, u)
        e = (np.minimum(d0 + w0, d1 + w1)) / scale
        best = min(best, float(np.max(e)))
    e = sum(energy_values(grid, u, est.eps, pot)) / scale
    top = ScalarField(grid, u[int(np.argmax(e))])
    lam = lagrange_multiplier(top, est.eps, pot) if est.constrained else 0.0
    try:
        idx = constrained_index(top, est.eps, pot, m=est.p + 8) if est.constrained else None
    except Exception as exc:  # the index is opportunistic here
        log.warning("index of refined slice unavailable: %s", exc)
        idx = None
    return replace(est, refined=True, refined_value=min(best, est.value), lam=lam,
                   index_estimate=idx)


# ---------------------------------------------------------------------------
# tables, chain and Weyl fit

CSV_HEADER = ("p", "eps", "constrained", "value", "refined_value", "lambda", "index_estimate", "seed")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class SpectrumTable:
    """Width estimates keyed by ``(p, eps, constrained)``."""

    def __init__(self, metadata: dict | None = None):
        self.metadata = dict(metadata or {})
        self._rows: dict = {}

    def add(self, row) -> None:
        if isinstance(row, WidthEstimate):
            row = row.to_row()
        row = {k: row.get(k) for k in CSV_HEADER}
        key = (int(row["p"]), float(row["eps"]), bool(row["constrained"]))
        if key in self._rows:
            raise ValueError(f"duplicate row for p={key[0]}, eps={key[1]}, constrained={key[2]}")
        self._rows[key] = row

    @property
    def rows(self) -> list[dict]:
        return [self._rows[k] for k in sorted(self._rows)]

    def value(self, p: int, eps: float, constrained: bool) -> float:
        try:
            return float(self._rows[(int(p), float(eps), bool(constrained))]["value"])
        except KeyError:
            raise MissingRowError(f"no row for p={p}, eps={eps}, constrained={constrained}") from None

    def ps(self, eps: float, constrained: bool) -> list[int]:
        return sorted(k[0] for k in self._rows if k[1] == float(eps) and k[2] == bool(constrained))

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in CSV_HEADER])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SpectrumTable":
        t = cls()
        for r in csv.DictReader(_io.StringIO(text)):
            t.add({
                "p": int(r["p"]), "eps": float(r["eps"]), "constrained": r["constrained"] == "true",
                "value": float(r["value"]),
                "refined_value": float(r["refined_value"]) if r["refined_value"] else None,
                "lambda": float(r["lambda"]) if r["lambda"] else None,
                "index_estimate": int(r["index_estimate"]) if r["index_estimate"] else None,
                "seed": int(r["seed"]),
            })
        return t


@dataclass
class ChainReport:
    rows: list
    ok: bool

    def to_dict(self) -> dict:
        return {"ok": self.ok, "rows": self.rows}


def chain_check(table: SpectrumTable, eps: float, ps, tol: float = 0.05,
                relative: bool = True) -> ChainReport:
    """Compare unconstrained and constrained estimates along ``p``.

    For each ``p`` checks ``c(p) <= c~(p) + tol_p`` and ``c~(p) <= c(p+1) + tol_p``
    where ``tol_p = tol * c(p+1)`` if ``relative`` else ``tol``. Margins are
    reported; ``ok`` requires all margins to be non-negative.

    Raises
    ------
    MissingRowError
        If a needed row is absent.
    """
    out = []
    for p in ps:
        c, ct, c_next = table.value(p, eps, False), table.value(p, eps, True), table.value(p + 1, eps, False)
        t = tol * c_next if relative else tol
        m1 = ct + t - c
        m2 = c_next + t - ct
        out.append({"p": int(p), "c": c, "c_tilde": ct, "c_next": c_next, "tol": t,
                    "margin_lower": m1, "margin_upper": m2, "ok": bool(m1 >= 0 and m2 >= 0)})
    return ChainReport(out, all(r["ok"] for r in out))


@dataclass
class WeylFit:
    exponent: float
    prefactor: float
    residuals: np.ndarray
    ps: np.ndarray
    values: np.ndarray

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "prefactor": self.prefactor,
                "residuals": self.residuals.tolist(), "p": self.ps.tolist(), "values": self.values.tolist()}


def weyl_fit(table, p_min: int, p_max: int, eps: float | None = None,
             constrained: bool = True) -> WeylFit:
    """Least-squares fit ``log c = log A + s log p`` over ``p_min..p_max``.

    ``table`` is a :class:`SpectrumTable` (then ``eps`` selects rows) or a
    mapping ``p -> value``.
    """
    if isinstance(table, SpectrumTable):
        if eps is None:
            eps_all = {k[1] for k in table._rows}
            if len(eps_all) != 1:
                raise ValueError("eps must be given for tables with several eps values")
            eps = eps_all.pop()
        data = {p: table.value(p, eps, constrained) for p in table.ps(eps, constrained)}
    else:
        data = dict(table)
    ps = np.array(sorted(p for p in data if p_min <= p <= p_max), dtype=float)
    if len(ps) < 4:
        raise ValueError("a Weyl fit needs at least 4 distinct p values")
    vals = np.array([data[int(p)] for p in ps], dtype=float)
    if np.any(vals <= 0) or np.any(ps <= 0):
        raise ValueError("widths and p must be positive for a log-log fit")
    x, y = np.log(ps), np.log(vals)
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return WeylFit(float(coef[1]), float(np.exp(coef[0])), resid, ps, vals)


def plot_weyl(fit: WeylFit, path, title: str = "") -> None:
    """Log-log plot of widths against ``p`` with the fitted line, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .io import atomic_write_bytes

    with matplotlib.rc_context({"svg.hashsalt": "halfvolume", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.loglog(fit.ps, fit.values, "o", label="estimate")
        pp = np.linspace(fit.ps.min(), fit.ps.max(), 50)
        ax.loglog(pp, fit.prefactor * pp**fit.exponent, "-",
                  label=f"{fit.prefactor:.3g} p^{fit.exponent:.3f}")
        ax.set_xlabel("p")
        ax.set_ylabel("normalized width")
        if title:
            ax.set_title(title)
        ax.legend()
        buf = _io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
