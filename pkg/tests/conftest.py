import numpy as np
import pytest

from survunc.data import SurvivalDataset, split
from survunc.synth import HazardMixtureSpec, generate


def random_survival(rng, n, d=3, censor_p=0.3, ties=False):
    X = rng.standard_normal((n, d))
    if ties:
        time = rng.integers(1, max(n // 3, 2) + 1, size=n).astype(float)
    else:
        time = rng.exponential(10.0, size=n) + 1e-3
    event = (rng.random(n) >= censor_p).astype(int)
    return SurvivalDataset(X, time, event)


def linear_ph(n, d=4, seed=0, beta=None, censor_rate=0.05):
    """Exponential PH data with log-risk X @ beta."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    beta = np.linspace(1.0, -0.5, d) if beta is None else np.asarray(beta, float)
    t = rng.exponential(10.0 * np.exp(-X @ beta))
    c = rng.exponential(1.0 / censor_rate, n)
    return SurvivalDataset(X, np.minimum(t, c), (t <= c).astype(int)), beta


@pytest.fixture(scope="session")
def synth_small():
    spec = HazardMixtureSpec(seed=11)
    ds, oracle = generate(spec, 1500)
    sp = split(ds.n, seed=11)
    return ds, oracle, ds.subset(sp.train_indices), ds.subset(sp.val_indices), ds.subset(sp.test_indices)


@pytest.fixture(scope="session")
def cox_small(synth_small):
    from survunc.models import CoxPH

    _, _, train, _, _ = synth_small
    return CoxPH().fit(train)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
