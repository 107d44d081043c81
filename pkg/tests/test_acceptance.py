"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary (with the measured numbers and
the runtime) that is printed at the end of the pytest session. The
min-max pipelines (criteria 5, 6 and 10) run the command line in
subprocesses, one after another. The chain runs are produced once by a
module fixture and reused by criteria 5 and 10.
"""
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from halfvolume.diagnostics import defect_ratio_stable, defect_report, linf_check, multiplier_certificate
from halfvolume.energy import constrained_index, dense_constrained_index, energy, first_variation, second_variation_apply
from halfvolume.grid import TorusGrid, l2_inner
from halfvolume.minmax import SpectrumTable, chain_check, weyl_fit
from halfvolume.potentials import build_glued_quartic, pure_quartic, verify_potential
from halfvolume.solver import solve_critical
from halfvolume.voxel import (
    DiscreteSweepout,
    MorseOrder,
    all_subsets,
    batch_area,
    batch_psi,
    batch_theta,
    batch_volume,
    continuity_margin,
    level_area_K,
    retract_sweepout,
)

from conftest import ACCEPTANCE_LINES, smooth_random

POT = build_glued_quartic()


def report(n: int, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]"
    ACCEPTANCE_LINES[n] = line
    print(line)


def cos_field(grid: TorusGrid):
    x = grid.mesh()[0]
    return grid.field(np.cos(2 * np.pi * x))


# ---------------------------------------------------------------------------
# shared solves


@pytest.fixture(scope="module")
def sweep():
    """Every solve used by criteria 3, 4 and 9, keyed by a label."""
    t0 = time.perf_counter()
    runs = {}
    runs["circle"] = solve_critical(cos_field(TorusGrid.unit(1, 1024)), 0.02, POT)
    runs["replica"] = solve_critical(cos_field(TorusGrid.unit(1, 64)), 0.02, POT)
    for eps, n in ((0.08, 256), (0.04, 256), (0.02, 512), (0.01, 1024), (0.005, 2048)):
        runs[f"halving eps={eps}"] = solve_critical(cos_field(TorusGrid.unit(1, n)), eps, POT)
    rng = np.random.Generator(np.random.Philox(99))
    g2 = TorusGrid.unit(2, 128)
    for eps in (0.05, 0.025):
        runs[f"torus eps={eps}"] = solve_critical(smooth_random(g2, rng, 1.0, eta=0.05), eps, POT)
    runs["torus rectangle eps=0.05"] = solve_critical(
        smooth_random(TorusGrid((1.0, 2.0), (128, 256)), rng, 1.0, eta=0.05), 0.05, POT)
    return runs, time.perf_counter() - t0


def start_cli(out: Path, args: list, threads: int) -> subprocess.Popen:
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = str(threads)
    out.mkdir(parents=True, exist_ok=True)
    log = open(out / "stderr.log", "w")
    return subprocess.Popen([sys.executable, "-m", "halfvolume.cli", *args, "--out", str(out)],
                            env=env, stdout=subprocess.PIPE, stderr=log, text=True)


def finish(proc: subprocess.Popen, t0: float):
    stdout, _ = proc.communicate()
    return proc.returncode, stdout, time.perf_counter() - t0


CHAIN_ARGS = ["weyl", "--eps", "0.05", "--sides", "1", "1", "--res", "128", "--screen-res", "64",
              "--p-min", "1", "--p-max", "5", "--chain", "--chain-tol", "0.05", "--seed", "7"]


@pytest.fixture(scope="module")
def chain_runs(tmp_path_factory):
    """The chain pipeline twice, with one and with four BLAS/OpenMP threads."""
    base = tmp_path_factory.mktemp("chain")
    out = []
    for name, threads in (("single", 1), ("multi", 4)):
        t0 = time.perf_counter()
        rc, stdout, secs = finish(start_cli(base / name, CHAIN_ARGS, threads), t0)
        out.append((base / name, rc, secs))
    return out


# ---------------------------------------------------------------------------


def test_criterion_01_potential_conditions():
    t0 = time.perf_counter()
    glued = verify_potential(POT, n_samples=10_000)
    quartic = verify_potential(pure_quartic(), n_samples=10_000)
    secs = time.perf_counter() - t0
    ok = glued.all_passed and quartic.failed == ["vii"] and secs < 1.0
    report(1, ok, f"glued quartic failed={glued.failed}, pure quartic failed={quartic.failed}", secs)
    assert ok


def test_criterion_02_variations_match_differences():
    t0 = time.perf_counter()
    g = TorusGrid.unit(2, 64)
    rng = np.random.Generator(np.random.Philox(2024))
    eps = 0.05
    worst1 = worst2 = 0.0
    for _ in range(20):
        u = smooth_random(g, rng, 1.3, eta=0.05)
        v = smooth_random(g, rng, 1.0, eta=0.05)

        def e(t):
            return energy(u + t * v, eps, POT).total

        h1, h2 = 1e-5, 1e-4
        fd1 = (e(h1) - e(-h1)) / (2 * h1)
        fd2 = (e(h2) - 2 * e(0.0) + e(-h2)) / h2**2
        an1 = l2_inner(first_variation(u, eps, POT), v)
        an2 = l2_inner(second_variation_apply(u, eps, POT, v), v)
        worst1 = max(worst1, abs(an1 - fd1) / abs(an1))
        worst2 = max(worst2, abs(an2 - fd2) / abs(an2))
    secs = time.perf_counter() - t0
    ok = worst1 <= 1e-6 and worst2 <= 1e-5 and secs < 30
    report(2, ok, f"first variation rel err {worst1:.2e}, second variation rel err {worst2:.2e}", secs)
    assert ok


def test_criterion_03_circle_critical_point(sweep):
    runs, _ = sweep
    t0 = time.perf_counter()
    cp = runs["circle"]
    e = cp.energy.normalized
    m, linf_ok = linf_check(cp.u, POT)
    full_dense = dense_constrained_index(cp.u, 0.02, POT)
    rep = runs["replica"]
    rep_dense = dense_constrained_index(rep.u, 0.02, POT)
    rep_iter = constrained_index(rep.u, 0.02, POT)
    secs = time.perf_counter() - t0
    ok = (cp.converged and 1.95 <= e <= 2.05 and abs(cp.lam) <= 1e-3 and linf_ok
          and rep.converged and rep_iter == rep_dense and cp.index_estimate == full_dense)
    report(3, ok, f"energy {e:.5f}, lambda {cp.lam:.1e}, max|u| {m:.4f}, {cp.iterations} steps; "
                  f"index N=1024 iterative {cp.index_estimate} / dense {full_dense}, "
                  f"N=64 replica iterative {rep_iter} / dense {rep_dense}", secs)
    assert ok


def test_criterion_04_mean_conservation(sweep):
    runs, secs = sweep
    worst = max(cp.max_mean_ratio for cp in runs.values())
    steps = sum(len(cp.history) for cp in runs.values())
    ok = worst <= 1e-12
    report(4, ok, f"max |mean|/|u| {worst:.2e} over {steps} iterates in {len(runs)} solves", secs)
    assert ok


def test_criterion_05_spectrum_chain(chain_runs):
    out, rc, secs = chain_runs[0]
    table = SpectrumTable.from_csv((out / "spectrum.csv").read_text())
    rep = chain_check(table, 0.05, range(1, 6), tol=0.05)
    worst = min(min(r["margin_lower"], r["margin_upper"]) for r in rep.rows)
    ok = rep.ok and secs < 3600
    report(5, ok, f"p=1..5 chain ok={rep.ok}, smallest margin {worst:.4f}", secs)
    assert ok


def test_criterion_06_weyl_exponent(tmp_path):
    t0 = time.perf_counter()
    args = ["weyl", "--eps", "0.03125", "--res", "256", "--screen-res", "64",
            "--p-min", "1", "--p-max", "8", "--check-exponent", "--seed", "0"]
    rc, stdout, secs = finish(start_cli(tmp_path, args, 1), t0)
    table = SpectrumTable.from_csv((tmp_path / "spectrum.csv").read_text())
    fit = weyl_fit(table, 1, 8, 0.03125)
    ok = abs(fit.exponent - 0.5) <= 0.15 and rc == 0 and secs < 7200
    vals = ", ".join(f"{v:.3f}" for v in fit.values)
    report(6, ok, f"slope {fit.exponent:.4f} (prefactor {fit.prefactor:.3f}); widths {vals}", secs)
    assert ok


def test_criterion_07_voxel_retraction_exhaustive():
    t0 = time.perf_counter()
    g = TorusGrid.unit(2, 4)
    order = MorseOrder(g)
    K = level_area_K(order)
    masks = all_subsets(16)
    odd = half = area = 0
    for t in (0.0, 0.25, 0.5, 1.0):
        p = batch_psi(masks, t, order)
        odd += int(np.count_nonzero(np.any(batch_psi(~masks, t, order) != ~p, axis=1)))
        area += int(np.count_nonzero(batch_area(batch_theta(masks, t, order), g) > batch_area(masks, g) + K + 1e-12))
    vol = batch_volume(batch_psi(masks, 1.0, order), g)
    half = int(np.count_nonzero(np.abs(vol - g.half_volume) >= g.cell_volume))
    small = masks[masks.sum(axis=1) <= 8]
    margin = continuity_margin(small, (0.0, 0.25, 0.5, 1.0), order)
    secs = time.perf_counter() - t0
    ok = odd == 0 and half == 0 and area == 0 and margin <= 0 and secs < 300
    report(7, ok, f"oddness violations {odd}, half-volume violations {half}, area violations {area}, "
                  f"continuity worst slack {margin:+.0f} cells over {len(small)}^2 pairs", secs)
    assert ok


def test_criterion_08_sweepout_comparison():
    t0 = time.perf_counter()
    g = TorusGrid.unit(2, 16)
    lines, ok = [], True
    for sweep_kind in ("height", "lex"):
        for order_kind in ("height", "lex"):
            order = MorseOrder(g, order_kind)
            _, rep = retract_sweepout(DiscreteSweepout.from_order(MorseOrder(g, sweep_kind)), order)
            ok &= rep.ok
            lines.append(f"{sweep_kind}/{order_kind}: {rep.input_max_area:.3f}->{rep.output_max_area:.3f} (K {rep.K:.3f})")
    secs = time.perf_counter() - t0
    ok = ok and secs < 60
    report(8, ok, "; ".join(lines), secs)
    assert ok


def test_criterion_09_certificates(sweep):
    runs, solve_secs = sweep
    t0 = time.perf_counter()
    worst_identity, pairing_fail, lines = 0.0, [], []
    for name, cp in runs.items():
        assert cp.converged, name
        cert = multiplier_certificate(cp.u, cp.epsilon, POT)
        worst_identity = max(worst_identity, cert.identity_residual / (1 + abs(cert.lam * cert.pairing)))
        if cp.u.grid.dim == 2:
            lines.append(f"{name} pairing/Vol {cert.pairing / cert.volume:.3f}")
            if not cert.pairing_lower_ok:
                pairing_fail.append(name)
    halving = [defect_report(cp.u, cp.epsilon, POT) for k, cp in runs.items() if k.startswith("halving")]
    stable = defect_ratio_stable(halving)
    ratios = ", ".join(f"{r.ratio:.3f}" for r in halving)
    secs = time.perf_counter() - t0 + solve_secs
    ok = worst_identity <= 1e-8 and not pairing_fail and stable and secs < 1800
    report(9, ok, f"identity {worst_identity:.1e}; {'; '.join(lines)}; defect ratios {ratios}", secs)
    assert ok


def test_criterion_10_determinism(chain_runs):
    (a, rc_a, s_a), (b, rc_b, s_b) = chain_runs
    same = (a / "spectrum.csv").read_bytes() == (b / "spectrum.csv").read_bytes()
    same_fit = json.loads((a / "weyl.json").read_text()) == json.loads((b / "weyl.json").read_text())
    ok = same and same_fit and rc_a == rc_b == 0
    report(10, ok, f"spectrum.csv identical={same}, weyl.json identical={same_fit} (1 vs 4 threads)", s_a + s_b)
    assert ok
