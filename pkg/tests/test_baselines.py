import numpy as np
import pytest
from conftest import linear_ph

from survunc.baselines import (
    EnsembleUq,
    McDropoutUq,
    aggregate_spread,
    ensemble_score,
    fit_ensemble,
    mc_dropout_score,
)
from survunc.models import CapabilityError, CoxPH, DeepSurv, NotFittedError, RandomSurvivalForest


class FixedCurves:
    """Fitted stand-in returning the same curve matrix for every input row."""

    kind = "fixed"
    fitted = True

    def __init__(self, curve, grid):
        self.curve = np.asarray(curve, float)
        self.grid_ = np.asarray(grid, float)

    def _check_X(self, X):
        return np.atleast_2d(np.asarray(X, float))

    def predict_survival(self, X, grid=None):
        return np.tile(self.curve, (np.asarray(X).shape[0], 1))


@pytest.fixture(scope="module")
def deep():
    ds, _ = linear_ph(500, seed=3)
    return ds, DeepSurv(seed=0, epochs=10, dropout=0.2).fit(ds)


def test_identical_members_score_zero():
    grid = [1.0, 2.0, 3.0]
    members = [FixedCurves([0.9, 0.5, 0.2], grid) for _ in range(4)]
    np.testing.assert_array_equal(EnsembleUq(members).score(np.zeros((5, 2))), 0.0)


def test_two_member_hand_value():
    grid = [1.0, 2.0, 3.0]
    uq = EnsembleUq([FixedCurves([0.9, 0.2, 0.1], grid), FixedCurves([0.9, 0.8, 0.1], grid)])
    np.testing.assert_allclose(uq.score(np.zeros((3, 1))), 0.3, rtol=1e-12)
    mean_std = EnsembleUq(uq.members, aggregate="mean_std").score(np.zeros((1, 1)))
    np.testing.assert_allclose(mean_std, 0.1)


def test_aggregate_spread_matches_numpy_std():
    rng = np.random.default_rng(0)
    draws = rng.random((7, 50, 12))
    got = aggregate_spread(lambda p, rows: draws[p][rows], 7, 50, block=16)
    np.testing.assert_allclose(got, draws.std(axis=0).max(axis=1), atol=1e-12)
    got = aggregate_spread(lambda p, rows: draws[p][rows], 7, 50, "mean_euclid", block=16)
    centre = draws.mean(axis=0)
    np.testing.assert_allclose(got, np.linalg.norm(draws - centre, axis=2).mean(axis=0), atol=1e-12)
    with pytest.raises(ValueError):
        aggregate_spread(lambda p, rows: draws[p][rows], 7, 50, "median")


def test_ensemble_contract():
    ds, _ = linear_ph(300, seed=1)
    with pytest.raises(ValueError):
        EnsembleUq([DeepSurv(epochs=1).fit(ds)])
    with pytest.raises(NotFittedError):
        EnsembleUq([DeepSurv(epochs=1).fit(ds), DeepSurv()])
    with pytest.raises(CapabilityError):
        fit_ensemble(CoxPH(), ds, m=3)


def test_ensemble_members_differ_and_reproduce():
    ds, _ = linear_ph(300, seed=2)
    members = fit_ensemble(DeepSurv(epochs=5), ds, m=3, seed=7, threads=2)
    again = fit_ensemble(DeepSurv(epochs=5), ds, m=3, seed=7, threads=1)
    uq, uq2 = EnsembleUq(members), EnsembleUq(again)
    s = uq.score(ds.X[:50])
    assert np.all(s > 0)
    np.testing.assert_array_equal(s, uq2.score(ds.X[:50]))
    rsf = fit_ensemble(RandomSurvivalForest(n_estimators=3), ds, m=2, seed=0)
    assert np.all(ensemble_score(EnsembleUq(rsf), ds.X[:10]) >= 0)


def test_mc_dropout_zero_rate_gives_zero():
    ds, _ = linear_ph(300, seed=4)
    m = DeepSurv(seed=0, epochs=3, dropout=0.0).fit(ds)
    np.testing.assert_array_equal(McDropoutUq(m, passes=10).score(ds.X[:20]), 0.0)


def test_mc_dropout_reproducible_and_positive(deep):
    ds, m = deep
    a = mc_dropout_score(m, ds.X[:40], passes=20, seed=3)
    b = mc_dropout_score(m, ds.X[:40], passes=20, seed=3)
    np.testing.assert_array_equal(a, b)
    assert np.all(a > 0)
    assert not np.array_equal(a, mc_dropout_score(m, ds.X[:40], passes=20, seed=4))


def test_mc_dropout_capability_and_arguments(deep):
    ds, m = deep
    rsf = RandomSurvivalForest(n_estimators=2).fit(ds)
    for model in (rsf, CoxPH().fit(ds)):
        with pytest.raises(CapabilityError, match="dropout"):
            McDropoutUq(model)
    with pytest.raises(ValueError):
        McDropoutUq(m, passes=1)


def test_ensemble_scores_follow_row_permutation(deep):
    ds, _ = deep
    X = ds.X[:30]
    perm = np.random.default_rng(0).permutation(30)
    uq = EnsembleUq(fit_ensemble(DeepSurv(epochs=3), ds, m=2, seed=0))
    np.testing.assert_allclose(uq.score(X[perm]), uq.score(X)[perm], rtol=1e-12)
