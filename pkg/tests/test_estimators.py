import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from halfvolume.estimators import ConstrainedAllenCahnSolver, HalfVolumeRetraction, HalfVolumeWidth
from halfvolume.grid import TorusGrid
from halfvolume.voxel import MorseOrder, batch_theta, level_area_K


def test_solver_fit_from_array():
    x = np.arange(256) / 256
    est = ConstrainedAllenCahnSolver(eps=0.05).fit(np.cos(2 * np.pi * x))
    assert est.converged_ and est.n_iter_ > 0
    assert est.energy_.normalized == pytest.approx(2.0, abs=0.05)
    assert est.gradient_norm(est.u_) == pytest.approx(est.residual_)
    assert est.certificate().identity_ok


def test_solver_params_roundtrip_and_clone():
    est = ConstrainedAllenCahnSolver(eps=0.1, grid_res=(64,), max_iters=10)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.gradient_norm(np.zeros(64))


@pytest.mark.parametrize("kwargs,arr", [
    ({"eps": -1.0}, np.zeros(256)),
    ({"max_iters": 1.5}, np.zeros(256)),
    ({}, np.zeros(128)),
])
def test_solver_rejects_bad_input(kwargs, arr):
    with pytest.raises(ValueError):
        ConstrainedAllenCahnSolver(**kwargs).fit(arr)


def test_solver_accepts_field_on_own_grid():
    g = TorusGrid.unit(2, 16)
    est = ConstrainedAllenCahnSolver(eps=0.1).fit(g.zeros())
    assert est.u_.grid == g and est.residual_ == 0.0


def test_width_estimator():
    w = HalfVolumeWidth(p=1, eps=0.1, res=32, screen_res=16, deltas=(0.5,), max_mode_sets=1).fit()
    assert w.value_ == w.estimate_.value > 0
    with pytest.raises(ValueError):
        HalfVolumeWidth(p=-1).fit()


def test_retraction_transformer(rng):
    tr = HalfVolumeRetraction(res=(8, 8), order="lex")
    X = rng.random((5, 8, 8)) < 0.5
    out = tr.fit_transform(X)
    assert tr.K_ == level_area_K(MorseOrder(tr.grid_, "lex"))
    assert np.array_equal(out, batch_theta(X.reshape(5, -1), 1.0, tr.order_))
    assert np.all(out.sum(axis=1) == 32)
    with pytest.raises(ValueError):
        tr.transform(np.full((1, 64), 2))
    with pytest.raises(ValueError):
        HalfVolumeRetraction(res=(8, 8), t=2.0).fit().transform(X)
