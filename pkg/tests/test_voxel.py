import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halfvolume.grid import TorusGrid
from halfvolume.voxel import (
    DiscreteSweepout,
    MorseOrder,
    SweepoutError,
    VolumeError,
    VoxelSet,
    all_subsets,
    area_inflation_check,
    batch_area,
    batch_phi,
    batch_psi,
    batch_theta,
    batch_volume,
    boundary_area,
    continuity_bound,
    continuity_margin,
    continuity_modulus_check,
    level_area_K,
    phi,
    psi,
    random_sets,
    retract_sweepout,
    select_s,
    symmetric_difference_volume,
    volume,
)

T2_16 = TorusGrid.unit(2, 16)


def test_empty_and_single_cell():
    assert volume(VoxelSet.empty(T2_16)) == 0 and boundary_area(VoxelSet.empty(T2_16)) == 0
    m = np.zeros(T2_16.shape, bool)
    m[3, 5] = True
    s = VoxelSet(T2_16, m)
    assert volume(s) == pytest.approx(1 / 256)
    assert boundary_area(s) == pytest.approx(4 / 16)


@pytest.mark.parametrize("sides", [(1.0, 1.0), (1.0, 2.0), (3.0, 0.5)])
def test_half_slab_area(sides):
    g = TorusGrid(sides, (16, 16))
    x, _ = g.mesh()
    slab = VoxelSet(g, x < sides[0] / 2)
    # two circles of length L_y
    assert boundary_area(slab) == pytest.approx(2 * sides[1])
    assert volume(slab) == pytest.approx(g.half_volume)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_complement_identities(seed):
    r = np.random.Generator(np.random.Philox(seed))
    g = TorusGrid((1.0, 2.0, 0.5), (4, 8, 4))
    s = VoxelSet(g, r.random(g.shape) < 0.4)
    assert boundary_area(s) == boundary_area(s.complement())
    assert volume(s) + volume(s.complement()) == pytest.approx(g.total_volume, abs=1e-15)
    t = VoxelSet(g, r.random(g.shape) < 0.6)
    u = VoxelSet(g, r.random(g.shape) < 0.5)
    # metric axioms for the symmetric-difference volume
    assert symmetric_difference_volume(s, s) == 0
    assert symmetric_difference_volume(s, t) == symmetric_difference_volume(t, s)
    assert symmetric_difference_volume(s, u) <= symmetric_difference_volume(s, t) + symmetric_difference_volume(t, u) + 1e-15


def test_batch_measures_agree(rng):
    masks = random_sets(T2_16, 20, rng)
    sets = [VoxelSet(T2_16, m) for m in masks]
    assert np.allclose(batch_volume(masks, T2_16), [volume(s) for s in sets])
    assert np.allclose(batch_area(masks, T2_16), [boundary_area(s) for s in sets])


def test_orders():
    g = TorusGrid.unit(2, 4)
    h, lx = MorseOrder(g, "height"), MorseOrder(g, "lex")
    assert h.cells.tolist() == list(range(16))
    assert lx.cells[:4].tolist() == [0, 4, 8, 12]
    assert not h.prefix(0).flat.any() and h.prefix(16).flat.all()
    with pytest.raises(ValueError):
        MorseOrder(g, "spiral")
    with pytest.raises(ValueError):
        MorseOrder(g, cells=np.zeros(16, int))


def test_grids_have_even_cell_counts():
    # power-of-two resolutions keep the half volume a whole number of cells
    with pytest.raises(ValueError):
        TorusGrid((1.0,), (1,))
    assert MorseOrder(TorusGrid.unit(1, 2)).half_count == 1


def test_select_s_edges():
    order = MorseOrder(T2_16)
    s = VoxelSet(T2_16, random_sets(T2_16, 1, np.random.Generator(np.random.Philox(0)), 0.5)[0])
    assert select_s(s, 0.0, order) == 0 and phi(s, 0.0, order) == s
    empty = VoxelSet.empty(T2_16)
    assert select_s(empty, 1.0, order) == 128
    assert phi(empty, 1.0, order) == order.prefix(128)
    with pytest.raises(VolumeError):
        select_s(VoxelSet.full(T2_16), 0.5, order)
    with pytest.raises(ValueError):
        select_s(empty, 1.5, order)


@pytest.mark.parametrize("kind", ["height", "lex"])
def test_select_s_matches_prefix_scan(rng, kind):
    g = TorusGrid.unit(2, 8)
    order = MorseOrder(g, kind)
    half = g.size // 2
    for m in random_sets(g, 40, rng, 0.5):
        s = VoxelSet(g, m)
        target = s.count + 0.5 * (half - s.count)
        expected = next(k for k in range(g.size + 1) if s.union(order.prefix(k)).count >= target)
        assert select_s(s, 0.5, order) == expected
        out = phi(s, 0.5, order)
        assert s.issubset(out)
        assert out.count - target < 1


def test_psi_odd_and_half_volume(rng):
    g = TorusGrid.unit(2, 8)
    order = MorseOrder(g)
    masks = random_sets(g, 50, rng)
    for t in rng.random(5).tolist() + [0.0, 1.0]:
        assert np.array_equal(batch_psi(~masks, t, order), ~batch_psi(masks, t, order))
    assert np.array_equal(batch_psi(masks, 0.0, order), masks)
    vol = batch_volume(batch_psi(masks, 1.0, order), g)
    assert np.all(np.abs(vol - g.half_volume) < g.cell_volume)


def test_psi_fixes_half_volume_sets(rng):
    g = TorusGrid.unit(2, 8)
    order = MorseOrder(g)
    keys = rng.random((10, g.size))
    masks = np.argsort(np.argsort(keys, axis=1), axis=1) < g.size // 2
    for t in (0.0, 0.3, 1.0):
        assert np.array_equal(batch_psi(masks, t, order), masks)
    assert psi(VoxelSet.empty(g), 1.0, order) == order.prefix(32)


def test_fill_is_monotone_in_t(rng):
    g = TorusGrid.unit(2, 8)
    order = MorseOrder(g)
    masks = random_sets(g, 30, rng, 0.5)
    prev = masks
    for t in np.linspace(0, 1, 11):
        cur = batch_phi(masks, float(t), order)
        assert np.all(prev <= cur)
        prev = cur


def test_K_values():
    assert level_area_K(MorseOrder(T2_16, "height")) == pytest.approx(2.125)
    assert level_area_K(MorseOrder(TorusGrid.unit(1, 8))) == 2.0
    rect = TorusGrid((1.0, 2.0), (16, 16))
    kh, kl = level_area_K(MorseOrder(rect, "height")), level_area_K(MorseOrder(rect, "lex"))
    assert kh == pytest.approx(4.125) and kl == pytest.approx(2.25)


@pytest.mark.parametrize("kind", ["height", "lex"])
def test_K_bounds_every_prefix(kind):
    order = MorseOrder(TorusGrid.unit(2, 8), kind)
    areas = [boundary_area(order.prefix(s)) for s in range(65)]
    assert np.allclose(order.prefix_areas(), areas)
    assert level_area_K(order) == pytest.approx(max(areas))


def test_area_inflation_exhaustive_4x4():
    g = TorusGrid.unit(2, 4)
    masks = all_subsets(16)
    for kind in ("height", "lex"):
        order = MorseOrder(g, kind)
        K = level_area_K(order)
        before = batch_area(masks, g)
        for t in (0.0, 0.25, 0.5, 1.0):
            after = batch_area(batch_theta(masks, t, order), g)
            assert np.all(after <= before + K + 1e-12), (kind, t)


def test_area_inflation_examples(rng):
    order = MorseOrder(T2_16)
    empty = VoxelSet.empty(T2_16)
    b, a, ok = area_inflation_check(empty, 1.0, order)
    assert b == 0 and ok and a <= level_area_K(order)
    half = VoxelSet(T2_16, T2_16.mesh()[0] < 0.5)
    b, a, ok = area_inflation_check(half, 0.7, order)
    assert ok and a == b


def test_continuity_exhaustive_circle():
    g = TorusGrid.unit(1, 8)
    order = MorseOrder(g)
    masks = all_subsets(8)
    masks = masks[masks.sum(axis=1) <= 4]
    vol = g.cell_volume
    ts = (0.0, 0.5, 1.0)
    fills = {t: batch_phi(masks, t, order).astype(np.int64) for t in ts}
    x = masks.astype(np.int64)
    d_in = (x @ (1 - x).T + (1 - x) @ x.T) * vol
    for t in ts:
        for r in ts:
            a, b = fills[t], fills[r]
            d_out = (a @ (1 - b).T + (1 - a) @ b.T) * vol
            assert np.all(d_out <= continuity_bound(d_in, t, r, g) + 1e-12), (t, r)


def test_continuity_examples(rng):
    g = TorusGrid.unit(2, 8)
    order = MorseOrder(g)
    s = VoxelSet(g, random_sets(g, 1, rng, 0.4)[0])
    lhs, _, ok = continuity_modulus_check(s, s, 0.3, 0.3, order)
    assert lhs == 0 and ok
    m = s.mask.copy()
    m.flat[np.flatnonzero(~m.ravel())[0]] = True
    lhs, rhs, ok = continuity_modulus_check(s, VoxelSet(g, m), 0.5, 0.5, order)
    assert ok and lhs <= 5 * g.cell_volume + g.cell_volume


def test_sweepout_by_height_order_retracts_to_half():
    order = MorseOrder(T2_16)
    sw = DiscreteSweepout.from_order(order)
    assert sw.is_path()
    out, rep = retract_sweepout(sw, order)
    assert rep.ok and rep.max_volume_error < T2_16.cell_volume
    assert out.max_area <= sw.max_area + rep.K
    assert np.all(out.masks.sum(axis=1) == 128)
    # slices below half volume are filled to the half sublevel set itself
    half = order.prefix(128).flat
    assert all(np.array_equal(m, half) for m in out.masks[:128])


def test_lex_sweepout_on_height_order():
    order = MorseOrder(T2_16, "height")
    sw = DiscreteSweepout.from_order(MorseOrder(T2_16, "lex"))
    out, rep = retract_sweepout(sw, order)
    assert rep.ok and rep.output_max_area <= rep.input_max_area + rep.K


def test_single_cell_growth_on_circle():
    g = TorusGrid.unit(1, 8)
    order = MorseOrder(g)
    sw = DiscreteSweepout.from_order(order)
    out, rep = retract_sweepout(sw, order)
    face = 1.0  # a point boundary in 1D has unit measure
    assert rep.ok and out.max_area <= 2 * face + rep.K
    assert np.all(out.masks.sum(axis=1) == 4)


def test_retract_rejects_malformed():
    order = MorseOrder(T2_16)
    sw = DiscreteSweepout(T2_16, np.ones((3, T2_16.size), bool))
    with pytest.raises(SweepoutError):
        retract_sweepout(sw, order)
    with pytest.raises(SweepoutError):
        DiscreteSweepout(T2_16, np.ones((2, 7), bool))


def test_continuity_margin_matches_pairwise_oracle():
    g = TorusGrid.unit(1, 8)
    order = MorseOrder(g)
    masks = all_subsets(8)
    masks = masks[masks.sum(axis=1) <= 4]
    ts = (0.0, 0.5, 1.0)
    worst = -np.inf
    for t in ts:
        for r in ts:
            for i in range(0, len(masks), 7):
                for j in range(0, len(masks), 5):
                    S, T = VoxelSet(g, masks[i]), VoxelSet(g, masks[j])
                    lhs, rhs, _ = continuity_modulus_check(S, T, t, r, order)
                    worst = max(worst, (lhs - rhs) / g.cell_volume)
    full = continuity_margin(masks, ts, order, block=17)
    assert full <= 0 and full >= worst - 1e-9
