"""Command line driver: ``halfvolume <command> ...`` or ``halfvolume run --config file.json``.

Every command is first turned into a JSON configuration, validated against a
schema that rejects unknown keys, and then executed by :func:`run`. Outputs
are written atomically into ``--out`` together with a ``manifest.json``.
The exit status is 0 only if every requested check passes.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .diagnostics import defect_report, linf_check, mollifier_bounds, multiplier_certificate
from .energy import energy
from .grid import TorusGrid, fourier_mode, mollify
from .io import (atomic_write_json, atomic_write_text, load_field, load_voxel_sets, save_field,
                 save_voxel_sets)
from .minmax import SearchConfig, SpectrumTable, chain_check, optimize_family, plot_weyl, refine_argmax, weyl_fit
from .potentials import Q_MAX, Q_MIN, make_potential, verify_potential
from .solver import FlowConfig, solve_critical
from .voxel import DiscreteSweepout, MorseOrder, level_area_K, retract_sweepout

log = logging.getLogger("halfvolume")

COMMANDS = ("verify-potential", "solve", "width", "weyl", "retract", "diagnose")

_POTENTIAL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"enum": ["glued_quartic", "pure_quartic"]},
        "q": {"type": "number", "exclusiveMinimum": Q_MIN, "exclusiveMaximum": Q_MAX},
        "beta": {"type": "number", "exclusiveMinimum": 1.0},
    },
}
_SIDES = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1, "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT0 = {"type": "integer", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_COMMON = {"command": {"enum": list(COMMANDS)}, "out": {"type": "string"}, "potential": _POTENTIAL,
           "seed": _INT0}
_SEARCH = {
    "eps": _POS, "sides": _SIDES, "res": _INT1, "screen_res": _INT1,
    "deltas": {"type": ["array", "null"], "items": _POS}, "max_mode_sets": _INT1, "n_polish": _INT1,
}

SCHEMAS = {
    "verify-potential": {"n_samples": {"type": "integer", "minimum": 10}},
    "solve": {"dim": {"enum": [1, 2, 3]}, "res": _INT1, "sides": _SIDES, "eps": _POS,
              "init": {"type": "string", "pattern": r"^(zero|random|mode:[0-9,\-]+|file:.+)$"},
              "tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
              "tau": {"type": ["number", "null"], "exclusiveMinimum": 0}, "max_iters": _INT0},
    "width": {**_SEARCH, "p": _INT0, "constrained": {"type": "boolean"}, "refine": {"type": "boolean"}},
    "weyl": {**_SEARCH, "p_min": _INT1, "p_max": _INT1, "chain": {"type": "boolean"},
             "chain_tol": _POS, "check_exponent": {"type": "boolean"},
             "exponent_target": {"type": "number"}, "exponent_tol": _POS},
    "retract": {"dim": {"enum": [1, 2, 3]}, "res": _INT1, "sides": _SIDES,
                "order": {"enum": ["height", "lex"]}, "sweepout": {"type": "string"}},
    "diagnose": {"field": {"type": "string"}, "eta": {"type": ["number", "string"]},
                 "log": {"type": "string"}},
}

DEFAULTS = {
    "verify-potential": {"n_samples": 10_000},
    "solve": {"dim": 1, "res": 1024, "sides": None, "eps": 0.02, "init": "mode:1",
              "tol": None, "tau": None, "max_iters": 200_000},
    "width": {"p": 1, "eps": 0.05, "constrained": True, "sides": [1.0, 1.0], "res": 128,
              "screen_res": 64, "deltas": None, "max_mode_sets": 4, "n_polish": 3, "refine": False},
    "weyl": {"p_min": 1, "p_max": 8, "eps": 0.03125, "sides": [1.0, 1.0], "res": 256,
             "screen_res": 64, "deltas": None, "max_mode_sets": 4, "n_polish": 3, "chain": False,
             "chain_tol": 0.05, "check_exponent": False, "exponent_target": 0.5, "exponent_tol": 0.15},
    "retract": {"dim": 2, "res": 16, "sides": None, "order": "height", "sweepout": "height"},
    "diagnose": {"eta": "auto", "log": "certificates.jsonl"},
}


class ConfigError(ValueError):
    pass


def schema_for(command: str) -> dict:
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["command"] + (["field"] if command == "diagnose" else []),
        "properties": {**_COMMON, **SCHEMAS[command]},
    }


def validate_config(config: dict) -> dict:
    """Check ``config`` against its command schema and fill in defaults.

    Raises
    ------
    ConfigError
        Naming the offending key. A tail exponent outside ``(2, 11/5)`` is
        rejected here.
    """
    cmd = config.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"'command' must be one of {COMMANDS}, got {cmd!r}")
    try:
        jsonschema.validate(config, schema_for(cmd))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        msg = exc.message
        if list(exc.absolute_path)[-1:] == ["q"]:
            msg += f" (the tail exponent must satisfy {Q_MIN:g} < q < {Q_MAX:g})"
        raise ConfigError(f"invalid config at '{where}': {msg}") from None
    full = {"out": "out", "seed": 0, "potential": {"name": "glued_quartic"}}
    full.update(copy.deepcopy(DEFAULTS[cmd]))
    full.update(copy.deepcopy(config))
    return full


@dataclass
class RunManifest:
    config: dict
    seed: int
    version: str
    grid: dict | None = None
    potential: dict | None = None
    timing: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(bool(v) for v in self.checks.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def _potential(cfg: dict):
    spec = dict(cfg["potential"])
    name = spec.pop("name", "glued_quartic")
    if name == "pure_quartic":
        spec = {}
    return make_potential(name, **spec)


def _grid(dim: int, res: int, sides) -> TorusGrid:
    sides = tuple(sides) if sides else (1.0,) * dim
    if len(sides) != dim:
        raise ConfigError(f"'sides' has {len(sides)} entries but dim is {dim}")
    return TorusGrid(sides, (res,) * dim)


def _search(cfg: dict) -> SearchConfig:
    return SearchConfig(sides=tuple(cfg["sides"]), res=cfg["res"], screen_res=cfg["screen_res"],
                        deltas=None if cfg["deltas"] is None else tuple(cfg["deltas"]),
                        max_mode_sets=cfg["max_mode_sets"], n_polish=cfg["n_polish"], seed=cfg["seed"])


def _initial_field(cfg: dict, grid: TorusGrid):
    init = cfg["init"]
    if init == "zero":
        return grid.zeros()
    if init == "random":
        rng = np.random.Generator(np.random.Philox(cfg["seed"]))
        noise = grid.field(rng.standard_normal(grid.shape))
        sm = mollify(noise, 2.0 * max(grid.spacing))
        return grid.field(sm.values / max(sm.max_abs(), 1e-300))
    if init.startswith("mode:"):
        k = [int(x) for x in init[5:].split(",")]
        if len(k) == 1:
            k = k + [0] * (grid.dim - 1)
        if len(k) != grid.dim:
            raise ConfigError(f"'init' mode needs {grid.dim} integers")
        return fourier_mode(grid, k, "cos")
    if init.startswith("file:"):
        u, _ = load_field(init[5:])
        if u.grid != grid:
            raise ConfigError("'init' file lives on a different grid")
        return u
    raise ConfigError(f"unknown init {init!r}")


# ---------------------------------------------------------------------------
# commands


def _cmd_verify(cfg, out: Path, man: RunManifest):
    pot = _potential(cfg)
    rep = verify_potential(pot, n_samples=cfg["n_samples"])
    man.outputs.append(str(atomic_write_json(out / "potential_report.json", rep.to_dict())))
    man.checks["conditions"] = rep.all_passed


def _cmd_solve(cfg, out: Path, man: RunManifest):
    pot = _potential(cfg)
    grid = _grid(cfg["dim"], cfg["res"], cfg["sides"])
    man.grid = grid.to_dict()
    u0 = _initial_field(cfg, grid)
    fc = FlowConfig(tau=cfg["tau"], tol=cfg["tol"], max_iters=cfg["max_iters"])
    cp = solve_critical(u0, cfg["eps"], pot, fc)
    res = cp.to_dict()
    res["linf_ok"] = linf_check(cp.u, pot)[1]
    man.outputs.append(str(atomic_write_json(out / "critical_point.json", res)))
    man.outputs.append(str(save_field(out / "field.hvf", cp.u, cfg["eps"])))
    man.checks["converged"] = cp.converged
    man.checks["linf"] = res["linf_ok"]
    man.checks["mean_zero"] = cp.max_mean_ratio <= 1e-12


def _cmd_width(cfg, out: Path, man: RunManifest):
    pot = _potential(cfg)
    search = _search(cfg)
    man.grid = search.grid().to_dict()
    est = optimize_family(cfg["p"], cfg["eps"], pot, cfg["constrained"], search)
    if cfg["refine"]:
        est = refine_argmax(est, FlowConfig(), pot, search)
    table = SpectrumTable({"search": search.to_dict()})
    table.add(est)
    man.outputs.append(str(atomic_write_text(out / "width.csv", table.to_csv())))
    man.outputs.append(str(atomic_write_json(out / "width.json", {
        **est.to_row(), "family": est.family, "argmax_param": est.argmax_param.tolist(),
        "ascent_converged": est.ascent_converged})))
    man.checks["ascent_converged"] = est.ascent_converged


def weyl_table(cfg: dict, pot) -> SpectrumTable:
    """Constrained estimates for ``p_min..p_max`` (plus unconstrained ones up to ``p_max+1`` for the chain)."""
    search = _search(cfg)
    table = SpectrumTable({"search": search.to_dict(), "potential": pot.to_dict(), "seed": cfg["seed"]})
    for p in range(cfg["p_min"], cfg["p_max"] + 1):
        t0 = time.perf_counter()
        table.add(optimize_family(p, cfg["eps"], pot, True, search))
        log.info("constrained p=%d done in %.1fs", p, time.perf_counter() - t0)
    if cfg["chain"]:
        for p in range(cfg["p_min"], cfg["p_max"] + 2):
            table.add(optimize_family(p, cfg["eps"], pot, False, search))
            log.info("unconstrained p=%d done", p)
    return table


def _cmd_weyl(cfg, out: Path, man: RunManifest):
    pot = _potential(cfg)
    man.grid = _search(cfg).grid().to_dict()
    table = weyl_table(cfg, pot)
    man.outputs.append(str(atomic_write_text(out / "spectrum.csv", table.to_csv())))
    summary = {}
    if cfg["p_max"] - cfg["p_min"] + 1 >= 4:
        fit = weyl_fit(table, cfg["p_min"], cfg["p_max"], cfg["eps"])
        summary["fit"] = fit.to_dict()
        plot_weyl(fit, out / "weyl.svg", title=f"eps = {cfg['eps']:g}")
        man.outputs.append(str(out / "weyl.svg"))
        if cfg["check_exponent"]:
            man.checks["exponent"] = abs(fit.exponent - cfg["exponent_target"]) <= cfg["exponent_tol"]
    elif cfg["check_exponent"]:
        raise ConfigError("'check_exponent' needs at least 4 values of p")
    if cfg["chain"]:
        rep = chain_check(table, cfg["eps"], range(cfg["p_min"], cfg["p_max"] + 1), cfg["chain_tol"])
        summary["chain"] = rep.to_dict()
        man.checks["chain"] = rep.ok
    man.outputs.append(str(atomic_write_json(out / "weyl.json", summary)))


def _cmd_retract(cfg, out: Path, man: RunManifest):
    grid = _grid(cfg["dim"], cfg["res"], cfg["sides"])
    man.grid = grid.to_dict()
    order = MorseOrder(grid, cfg["order"])
    src = cfg["sweepout"]
    if src in ("height", "lex"):
        sw = DiscreteSweepout.from_order(MorseOrder(grid, src))
    else:
        header, masks = load_voxel_sets(src)
        if tuple(header["dims"]) != grid.shape:
            raise ConfigError("sweepout file lives on a different grid")
        sw = DiscreteSweepout(grid, np.stack([m.ravel() for m in masks]))
    outsw, rep = retract_sweepout(sw, order)
    man.outputs.append(str(save_voxel_sets(out / "retracted.json", outsw.masks.reshape((-1,) + grid.shape),
                                           grid.shape, grid.sides, cfg["order"], grid.half_volume)))
    man.outputs.append(str(atomic_write_json(out / "retraction_report.json",
                                             {**rep.to_dict(), "K": level_area_K(order)})))
    man.checks["half_volume"] = rep.half_volume_ok
    man.checks["area_bound"] = rep.area_ok


def _cmd_diagnose(cfg, out: Path, man: RunManifest):
    pot = _potential(cfg)
    u, eps = load_field(cfg["field"])
    man.grid = u.grid.to_dict()
    eta = eps if cfg["eta"] == "auto" else float(cfg["eta"])
    cert = multiplier_certificate(u, eps, pot, eta)
    row = {"field": cfg["field"], "certificate": cert.to_dict(),
           "defect": defect_report(u, eps, pot).to_dict(),
           "mollifier": mollifier_bounds(u, eta, pot).to_dict(),
           "linf": dict(zip(("max_abs", "ok"), linf_check(u, pot))),
           "energy": energy(u, eps, pot).to_dict()}
    logp = out / cfg["log"]
    old = logp.read_text() if logp.exists() else ""
    atomic_write_text(logp, old + json.dumps(row, sort_keys=True) + "\n")
    man.outputs.append(str(logp))
    man.checks["identity"] = cert.identity_ok
    man.checks["linf"] = row["linf"]["ok"]


_HANDLERS = {"verify-potential": _cmd_verify, "solve": _cmd_solve, "width": _cmd_width,
             "weyl": _cmd_weyl, "retract": _cmd_retract, "diagnose": _cmd_diagnose}


def run(config: dict) -> RunManifest:
    """Validate ``config``, execute its command and write outputs plus a manifest."""
    cfg = validate_config(config)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(config=cfg, seed=cfg["seed"], version=__version__)
    if cfg["command"] != "retract":
        man.potential = _potential(cfg).to_dict()
    t0 = time.perf_counter()
    _HANDLERS[cfg["command"]](cfg, out, man)
    man.timing = {"seconds": time.perf_counter() - t0}
    atomic_write_json(out / "manifest.json", man.to_dict())
    return man


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sp, with_potential: bool = True):
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--seed", type=int, default=0)
    if with_potential:
        sp.add_argument("--potential", default="glued_quartic", choices=["glued_quartic", "pure_quartic"])
        sp.add_argument("--q", type=float, default=None, help="tail exponent of the glued quartic")
        sp.add_argument("--beta", type=float, default=None, help="glue point of the glued quartic")


def _add_search(sp, eps: float, res: int):
    sp.add_argument("--eps", type=float, default=eps)
    sp.add_argument("--sides", type=float, nargs="+", default=[1.0, 1.0])
    sp.add_argument("--res", type=int, default=res)
    sp.add_argument("--screen-res", type=int, default=64)
    sp.add_argument("--deltas", type=float, nargs="+", default=None)
    sp.add_argument("--max-mode-sets", type=int, default=4)
    sp.add_argument("--n-polish", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="halfvolume", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("verify-potential", help="check the structural conditions of a potential")
    _add_common(sp)
    sp.add_argument("--n-samples", type=int, default=10_000)

    sp = sub.add_parser("solve", help="descend to a mean-zero critical point")
    _add_common(sp)
    sp.add_argument("--dim", type=int, default=1, choices=[1, 2, 3])
    sp.add_argument("--res", type=int, default=1024)
    sp.add_argument("--sides", type=float, nargs="+", default=None)
    sp.add_argument("--eps", type=float, default=0.02)
    sp.add_argument("--init", default="mode:1", help="zero | random | mode:k[,k2,..] | file:path.hvf")
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--max-iters", type=int, default=200_000)

    sp = sub.add_parser("width", help="estimate one min-max level")
    _add_common(sp)
    _add_search(sp, 0.05, 128)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--constrained", choices=["true", "false"], default="true")
    sp.add_argument("--refine", action="store_true")

    sp = sub.add_parser("weyl", help="constrained levels over a range of p and their power-law fit")
    _add_common(sp)
    _add_search(sp, 0.03125, 256)
    sp.add_argument("--p-min", type=int, default=1)
    sp.add_argument("--p-max", type=int, default=8)
    sp.add_argument("--chain", action="store_true", help="also estimate unconstrained levels and compare")
    sp.add_argument("--chain-tol", type=float, default=0.05)
    sp.add_argument("--check-exponent", action="store_true")
    sp.add_argument("--exponent-target", type=float, default=0.5)
    sp.add_argument("--exponent-tol", type=float, default=0.15)

    sp = sub.add_parser("retract", help="retract a discrete sweepout onto half-volume sets")
    _add_common(sp, with_potential=False)
    sp.add_argument("--dim", type=int, default=2, choices=[1, 2, 3])
    sp.add_argument("--res", type=int, default=16)
    sp.add_argument("--sides", type=float, nargs="+", default=None)
    sp.add_argument("--order", choices=["height", "lex"], default="height")
    sp.add_argument("--sweepout", default="height", help="height | lex | path to a voxel-set JSON file")

    sp = sub.add_parser("diagnose", help="certificates for a stored field")
    _add_common(sp)
    sp.add_argument("--field", required=True)
    sp.add_argument("--eta", default="auto")
    sp.add_argument("--log", default="certificates.jsonl")

    sp = sub.add_parser("run", help="execute a JSON configuration")
    sp.add_argument("--config", required=True)
    return ap


def args_to_config(ns: argparse.Namespace) -> dict:
    d = {k: v for k, v in vars(ns).items() if k != "verbose" and v is not None}
    cfg = {"command": d.pop("command")}
    name, q, beta = d.pop("potential", None), d.pop("q", None), d.pop("beta", None)
    if name is not None:
        pot = {"name": name}
        if q is not None:
            pot["q"] = q
        if beta is not None:
            pot["beta"] = beta
        cfg["potential"] = pot
    if "constrained" in d:
        d["constrained"] = d["constrained"] == "true"
    if cfg["command"] == "diagnose" and d.get("eta") not in (None, "auto"):
        d["eta"] = float(d["eta"])
    cfg.update(d)
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "run":
            config = json.loads(Path(ns.config).read_text())
        else:
            config = args_to_config(ns)
        man = run(config)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"ok": man.ok, "checks": man.checks, "outputs": man.outputs}, indent=2))
    return 0 if man.ok else 1


if __name__ == "__main__":
    sys.exit(main())
