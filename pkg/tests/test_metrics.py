import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_auroc, brute_ctd
from scipy import stats

import survunc.metrics as M
from survunc.metrics import (
    MetricError,
    auprc,
    auroc,
    bootstrap,
    brier,
    c_td,
    ibs,
    ibs_grid,
    median_survival_diff,
    pearson,
    per_sample_ibs,
    wilcoxon_signed_rank,
)


def _random_curves(rng, n, G, ties=True):
    grid = np.sort(rng.choice(np.arange(1, 3 * G), G, replace=False)).astype(float)
    steps = rng.random((n, G))
    if ties:
        steps = np.round(steps, 1)
    surv = np.cumprod(1 - 0.3 * steps, axis=1)
    return grid, surv


def test_ctd_matches_brute_force():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 41))
        grid, surv = _random_curves(rng, n, int(rng.integers(1, 8)))
        time = rng.integers(0, 25, n).astype(float)
        event = rng.integers(0, 2, n)
        try:
            got = c_td(surv, grid, time, event).value
        except MetricError:
            continue
        assert abs(got - brute_ctd(surv, grid, time, event)) <= 1e-12
        checked += 1


def test_ctd_extremes_and_errors():
    grid = np.array([1.0, 2.0, 3.0])
    time = np.array([1.0, 2.0, 3.0])
    perfect = np.array([[0.1, 0.0, 0.0], [0.9, 0.2, 0.0], [0.9, 0.8, 0.1]])
    assert c_td(perfect, grid, time, [1, 1, 1]).value == 1.0
    assert c_td(perfect[::-1], grid, time, [1, 1, 1]).value == 0.0
    with pytest.raises(MetricError):
        c_td(perfect, grid, time, [0, 0, 0])
    rng = np.random.default_rng(1)
    n = 2000
    g = np.linspace(0.0, 50.0, 40)
    s = np.cumprod(rng.uniform(0.5, 1.0, (n, 40)), axis=1)
    val = c_td(s, g, rng.exponential(10, n), rng.integers(0, 2, n)).value
    assert abs(val - 0.5) < 0.02


def test_auroc_matches_brute_force_and_sklearn():
    from sklearn.metrics import average_precision_score, roc_auc_score

    rng = np.random.default_rng(2)
    for _ in range(500):
        neg = np.round(rng.random(int(rng.integers(1, 25))), 1)
        pos = np.round(rng.random(int(rng.integers(1, 25))), 1)
        assert abs(auroc(neg, pos) - brute_auroc(neg, pos)) <= 1e-12
        if neg.size > 1 or pos.size > 1:
            y = np.r_[np.zeros(neg.size), np.ones(pos.size)]
            s = np.r_[neg, pos]
            assert abs(auroc(neg, pos) - roc_auc_score(y, s)) <= 1e-12
            assert abs(auprc(neg, pos) - average_precision_score(y, s)) <= 1e-12


def test_auroc_auprc_extremes():
    assert auroc([0.1, 0.2], [0.5, 0.9]) == 1.0 and auprc([0.1, 0.2], [0.5, 0.9]) == 1.0
    s = [0.3, 0.1, 0.7, 0.7]
    assert auroc(s, s) == 0.5
    with pytest.raises(MetricError):
        auroc([], [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-30, 30), min_size=1, max_size=20), st.lists(st.integers(-30, 30), min_size=1, max_size=20))
def test_auroc_monotone_invariance(neg, pos):
    neg, pos = np.array(neg, float), np.array(pos, float)
    assert auroc(neg, pos) == auroc(np.exp(neg), np.exp(pos))
    assert auroc(neg, pos) == auroc(neg ** 3 - 7, pos ** 3 - 7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_ctd_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 30))
    grid, surv = _random_curves(rng, n, 5)
    time = rng.integers(1, 20, n).astype(float)
    event = np.r_[1, rng.integers(0, 2, n - 1)]
    try:
        a = c_td(surv, grid, time, event).value
    except MetricError:
        return
    assert a == c_td(surv ** 3, grid, time, event).value


def test_brier_constant_half_and_mse_identity():
    rng = np.random.default_rng(3)
    n = 200
    time = rng.exponential(5, n)
    event = np.ones(n, int)
    grid = np.sort(time)
    half = np.full((n, n), 0.5)
    for t in (0.5, 2.0, 7.0):
        assert brier(half, grid, time, event, t).value == pytest.approx(0.25, abs=1e-12)
    surv = np.exp(-grid[None, :] / rng.uniform(2, 8, (n, 1)))
    t = 3.0
    s_t = M._step_matrix(surv, grid, [t])[:, 0]
    alive = (time > t).astype(float)
    np.testing.assert_allclose(brier(surv, grid, time, event, t).value, np.mean((alive - s_t) ** 2), rtol=1e-12)


def test_brier_oracle_steps_score_zero():
    time = np.array([1.0, 2.0, 3.0, 4.0])
    grid = time.copy()
    surv = (grid[None, :] < time[:, None]).astype(float)
    for t in (0.5, 1.0, 2.5, 4.0):
        assert brier(surv, grid, time, np.ones(4), t).value == 0.0
    assert ibs(surv, grid, time, np.ones(4), eval_times=[1.0, 4.0]).value == 0.0
    np.testing.assert_array_equal(per_sample_ibs(surv, grid, time, np.ones(4), eval_times=[1.0, 4.0]), 0.0)


def test_ibs_normalisation_and_grid_errors():
    rng = np.random.default_rng(4)
    time = rng.exponential(5, 100)
    event = rng.random(100) < 0.7
    grid = np.sort(time)
    half = np.full((100, 100), 0.5)
    # with censoring the IPCW weights still average to one only in expectation; without, exactly 0.25
    assert ibs(half, grid, time, np.ones(100)).value == pytest.approx(0.25, abs=1e-12)
    assert 0.0 <= ibs(half, grid, time, event).value <= 1.0
    with pytest.raises(MetricError):
        ibs(half, grid, time, event, eval_times=[1.0])
    with pytest.raises(MetricError):
        ibs_grid(time, np.zeros(100))


def test_ibs_refinement_stability():
    rng = np.random.default_rng(5)
    n = 3000
    rate = rng.uniform(0.05, 0.3, n)
    t = rng.exponential(1 / rate)
    c = rng.exponential(15, n)
    time, event = np.minimum(t, c), (t <= c).astype(int)
    grid = np.linspace(0, time.max(), 400)
    surv = np.exp(-rate[:, None] * grid[None, :])
    coarse = np.linspace(0.1, 20, 200)
    fine = np.linspace(0.1, 20, 399)
    assert abs(ibs(surv, grid, time, event, coarse).value - ibs(surv, grid, time, event, fine).value) < 1e-3


def test_per_sample_mean_equals_ibs_without_censoring():
    rng = np.random.default_rng(6)
    n = 300
    time = rng.exponential(5, n)
    grid = np.linspace(0, time.max(), 50)
    surv = np.exp(-grid[None, :] / rng.uniform(2, 8, (n, 1)))
    ev = np.ones(n, int)
    et = ibs_grid(time, ev)
    assert abs(per_sample_ibs(surv, grid, time, ev, et).mean() - ibs(surv, grid, time, ev, et).value) < 1e-12
    one = per_sample_ibs(surv[:1], grid, time[:1], ev[:1], [0.5, 3.0])
    np.testing.assert_allclose(one[0], ibs(surv[:1], grid, time[:1], ev[:1], [0.5, 3.0]).value, rtol=1e-12)


def test_median_survival_diff_examples():
    grid = np.array([1.0, 5.0, 10.0, 15.0])
    diff, flag = median_survival_diff([[1.0, 1.0, 0.4, 0.4]], grid, [7.0])
    assert diff[0] == 3.0 and not flag[0]
    diff, flag = median_survival_diff([[0.9, 0.5, 0.3, 0.1]], grid, [5.0])
    assert diff[0] == 0.0
    diff, flag = median_survival_diff([[0.99, 0.9, 0.8, 0.7]], grid, [4.0])
    assert flag[0] and diff[0] == 11.0


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 7]) == pytest.approx(0.9934, abs=1e-4)
    a = np.random.default_rng(0).normal(size=50)
    assert pearson(a, a) == 1.0 and pearson(a, -a) == -1.0
    with pytest.raises(MetricError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(MetricError):
        pearson([1.0], [2.0])


def test_bootstrap_determinism_and_skips():
    idx = np.arange(100)
    a = bootstrap(lambda d: d.mean(), idx, 50, seed=3, threads=1)
    b = bootstrap(lambda d: d.mean(), idx, 50, seed=3, threads=4)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert bootstrap(lambda d: 0.7, idx, 20).std == 0.0

    def flaky(d):
        if int(d.sum()) % 20 == 0:
            raise MetricError("no pairs")
        return 1.0

    s = bootstrap(flaky, idx, 100, seed=0, threads=1)
    assert s.n_skipped == int(np.isnan(s.replicates).sum())
    with pytest.raises(MetricError):
        bootstrap(lambda d: (_ for _ in ()).throw(MetricError("x")), idx, 10)
    with pytest.raises(ValueError):
        bootstrap(lambda d: 0.0, idx, 1)


def test_wilcoxon_textbook_case():
    a = np.arange(1.0, 11.0)
    stat, p = wilcoxon_signed_rank(a, np.zeros(10))
    assert stat == 0.0
    assert p == pytest.approx(2 / 1024, abs=1e-15)
    with pytest.raises(MetricError):
        wilcoxon_signed_rank(a, a)
    with pytest.raises(MetricError):
        wilcoxon_signed_rank(a[:5], a[:5] + 1)


def test_wilcoxon_matches_scipy():
    rng = np.random.default_rng(7)
    for n in (8, 15, 25, 40, 80):
        a, b = rng.normal(size=n), rng.normal(0.3, 1, n)
        stat, p = wilcoxon_signed_rank(a, b)
        method = "exact" if n <= 25 else "approx"
        ref = stats.wilcoxon(a, b, method=method, correction=True)
        assert stat == ref.statistic
        assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_wilcoxon_exact_and_normal_agree(monkeypatch):
    rng = np.random.default_rng(8)
    for _ in range(20):
        a, b = rng.normal(size=25), rng.normal(0.2, 1, 25)
        _, exact = wilcoxon_signed_rank(a, b)
        monkeypatch.setattr(M, "EXACT_WILCOXON_MAX_N", 0)
        _, normal = wilcoxon_signed_rank(a, b)
        monkeypatch.setattr(M, "EXACT_WILCOXON_MAX_N", 25)
        assert abs(exact - normal) < 0.02
