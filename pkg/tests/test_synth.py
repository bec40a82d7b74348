import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from survunc.estimators import kaplan_meier
from survunc.metrics import c_td
from survunc.synth import (
    GroundTruthModel,
    HazardMixtureSpec,
    Oracle,
    SimulationError,
    default_shift,
    generate,
    generate_ood,
    ground_truth_curve,
    solve_censoring_rate,
)


@pytest.fixture(scope="module")
def big():
    return generate(HazardMixtureSpec(seed=3), 20_000)


def test_censoring_fraction_on_target(big):
    ds, _ = big
    assert abs((1 - ds.event.mean()) - 0.37) < 0.03


def test_zero_censoring():
    ds, oracle = generate(HazardMixtureSpec(seed=1, censoring=0.0), 500)
    assert np.all(ds.event == 1) and oracle.censor_rate == 0.0


def test_constant_hazard_special_case():
    ds, _ = generate(HazardMixtureSpec(seed=2, components=("constant",), risk_scale=0.0), 20_000)
    km = kaplan_meier(ds.time, ds.event)
    t = km.grid[km.grid < 60]
    assert np.max(np.abs(km(t) - np.exp(-t / 20.0))) < 0.02


def test_degenerate_components_are_closed_form():
    for name, (k, lam) in (("weibull_inc", (6.0, 20.0)), ("weibull_dec", (0.4, 20.0))):
        spec = HazardMixtureSpec(seed=0, components=(name,), risk_scale=0.0)
        _, oracle = generate(spec, 10)
        grid = np.linspace(0, 60, 31)
        x = np.random.default_rng(0).normal(size=spec.d)
        np.testing.assert_allclose(ground_truth_curve(oracle, x, grid).probabilities, np.exp(-(grid / lam) ** k), rtol=1e-12)


def test_mixture_weights_and_curve_validity(big):
    _, oracle = big
    X = np.random.default_rng(0).normal(scale=2, size=(2000, oracle.spec.d))
    w = oracle.mixing_weights(X)
    assert np.all(w > 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    grid = np.r_[0.0, np.geomspace(1e-3, 500, 200)]
    s = oracle.survival(X, grid)
    np.testing.assert_array_equal(s[:, 0], 1.0)
    assert np.all(np.diff(s, axis=1) <= 1e-15) and np.all((s >= 0) & (s <= 1))
    t = np.geomspace(1e-3, 100, 50)
    assert np.all(oracle.component_hazard(t) >= 0)


def test_hazard_identity(big):
    _, oracle = big
    rng = np.random.default_rng(5)
    h = 1e-6
    for x in rng.normal(size=(20, oracle.spec.d)):
        scale = float(np.exp(-oracle.eta(x)[0]))
        t = np.linspace(0.05, 3.0, 40) * scale
        s = lambda u: oracle.survival(x, u)[0]
        num = -(np.log(s(t + h * scale)) - np.log(s(t - h * scale))) / (2 * h * scale)
        ana = oracle.hazard(x, t)
        assert np.max(np.abs(num - ana) / np.maximum(ana, 1.0)) < 1e-3


def test_prefix_and_determinism():
    spec = HazardMixtureSpec(seed=9)
    small, _ = generate(spec, 300)
    large, _ = generate(spec, 700)
    assert small.same_content(large.subset(range(300)))
    again, _ = generate(spec, 300)
    assert small.same_content(again)


def test_ood_shift_and_significance():
    spec = HazardMixtureSpec(seed=4)
    shift = np.zeros(spec.d)
    shift[0] = 1.0
    ood, oracle = generate_ood(spec, 10_000, shift)
    assert abs(ood.X[:, 0].mean() - 1.0) < 0.05
    assert np.all(np.abs(ood.X[:, 1:].mean(axis=0)) < 0.05)
    ind, _ = generate(spec, 5000)
    ood5, _ = generate_ood(spec, 5000)
    assert stats.ranksums(ind.X[:, 0], ood5.X[:, 0]).pvalue < 1e-3
    np.testing.assert_array_equal(default_shift(8), [1, 1, 1, 1, 0, 0, 0, 0])


def test_zero_shift_matches_in_distribution():
    spec = HazardMixtureSpec(seed=6)
    ind, _ = generate(spec, 5000)
    ood, _ = generate_ood(spec, 5000, 0.0)
    assert stats.ks_2samp(ind.time, ood.time).pvalue > 0.01
    assert stats.ks_2samp(ind.X[:, 0], ood.X[:, 0]).pvalue > 0.01


def test_default_shift_lowers_risk(big):
    _, oracle = big
    assert np.all(oracle.risk_coef[:4] < 0) and np.all(oracle.risk_coef[4:] > 0)
    np.testing.assert_allclose(np.linalg.norm(oracle.risk_coef), oracle.spec.risk_scale)


def test_oracle_ranking_beats_fitted_model(big):
    from survunc.models import CoxPH

    ds, oracle = big
    train, test = ds.subset(range(4000)), ds.subset(range(4000, 6000))
    cox = CoxPH().fit(train)
    grid = np.unique(test.time)
    truth = c_td(GroundTruthModel(oracle).predict_survival(test.X, grid), grid, test.time, test.event).value
    fitted = c_td(cox.predict_survival(test.X, grid), grid, test.time, test.event).value
    assert truth > fitted - 0.01


def test_oracle_json_round_trip(tmp_path, big):
    _, oracle = big
    oracle.save(tmp_path / "oracle.json")
    back = Oracle.load(tmp_path / "oracle.json")
    X = np.random.default_rng(1).normal(size=(50, oracle.spec.d))
    grid = np.linspace(0, 50, 20)
    np.testing.assert_array_equal(back.survival(X, grid), oracle.survival(X, grid))
    assert back.censor_rate == oracle.censor_rate


def test_errors():
    with pytest.raises(SimulationError, match="achievable range"):
        solve_censoring_rate(0.5, np.full(100, 1e-6), 100.0)
    with pytest.raises(SimulationError):
        HazardMixtureSpec(censoring=1.5)
    with pytest.raises(SimulationError):
        HazardMixtureSpec(components=("gompertz",))
    with pytest.raises(SimulationError):
        generate(HazardMixtureSpec(), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 20), st.integers(1, 6))
def test_generated_records_valid(seed, d):
    ds, _ = generate(HazardMixtureSpec(seed=seed, d=d), 40)
    assert np.all(ds.time > 0) and np.all(np.isfinite(ds.time))
    assert set(np.unique(ds.event)) <= {0, 1}
