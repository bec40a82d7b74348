"""Variability-based uncertainty baselines: deep ensembles and MC-Dropout.

Both score a subject by the spread of its predicted survival curves across
ensemble members or stochastic passes. The default aggregation takes the
population standard deviation at every grid time and reports the maximum.
"""

from __future__ import annotations

import numpy as np

from ._parallel import parallel_map
from ._rng import derive_seed, rng_for
from .data import as_grid
from .models.base import CapabilityError, NotFittedError

AGGREGATIONS = ("max_std", "mean_std", "mean_euclid")
DEFAULT_ENSEMBLE_SIZE = 10
DEFAULT_PASSES = 100
_BLOCK = 256


def aggregate_spread(curves, n_draws, n_rows, method="max_std", block=_BLOCK):
    """Spread of ``n_draws`` curve sets per row.

    ``curves(p, rows)`` returns the (len(rows), G) curves of draw ``p``.
    Deviations are taken from draw 0, so identical draws give exactly 0.
    """
    if method not in AGGREGATIONS:
        raise ValueError(f"aggregate must be one of {AGGREGATIONS}")
    out = np.empty(n_rows)
    for start in range(0, n_rows, block):
        rows = np.arange(start, min(start + block, n_rows))
        first = curves(0, rows)
        s1 = np.zeros_like(first)
        s2 = np.zeros_like(first)
        for p in range(1, n_draws):
            dev = curves(p, rows) - first
            s1 += dev
            s2 += dev * dev
        mean_dev = s1 / n_draws
        if method == "mean_euclid":
            dist = np.sqrt((mean_dev ** 2).sum(axis=1))
            for p in range(1, n_draws):
                dist += np.sqrt(((curves(p, rows) - first - mean_dev) ** 2).sum(axis=1))
            out[rows] = dist / n_draws
            continue
        std = np.sqrt(np.maximum(s2 / n_draws - mean_dev * mean_dev, 0.0))
        out[rows] = std.max(axis=1) if method == "max_std" else std.mean(axis=1)
    return out


class EnsembleUq:
    """Members differing only in their seed; scored by curve spread."""

    kind = "ensemble"

    def __init__(self, members, grid=None, aggregate="max_std"):
        members = list(members)
        if len(members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        for m in members:
            if not m.fitted:
                raise NotFittedError("every ensemble member must be fitted")
        self.members = members
        self.grid = as_grid(members[0].grid_ if grid is None else grid)
        self.aggregate = aggregate

    @property
    def m(self):
        return len(self.members)

    def score(self, X):
        X = self.members[0]._check_X(X)
        return aggregate_spread(lambda p, rows: self.members[p].predict_survival(X[rows], self.grid),
                                self.m, X.shape[0], self.aggregate)


def fit_ensemble(template, train, val=None, m=DEFAULT_ENSEMBLE_SIZE, seed=0, threads=None):
    """Fit ``m`` copies of ``template`` with seeds derived from ``(seed, i)``."""
    if not template.supports_reseed:
        raise CapabilityError(f"{template.kind} has no random initialisation to vary across members")
    seeds = [derive_seed(seed, "member", i) & ((1 << 31) - 1) for i in range(m)]
    return parallel_map(lambda s: template.reseeded(s).fit(train, val), seeds, threads)


class McDropoutUq:
    """Spread over stochastic forward passes with dropout left on.

    Pass ``p`` draws its dropout masks from ``rng_for(seed, "mc-pass", p)``
    over all rows of ``X`` at once, so scores are reproducible for a given
    input matrix.
    """

    kind = "mcdropout"

    def __init__(self, model, passes=DEFAULT_PASSES, seed=0, grid=None, aggregate="max_std"):
        if not model.supports_dropout:
            raise CapabilityError(f"{model.kind} does not support dropout; MC-Dropout is not applicable")
        if passes < 2:
            raise ValueError("MC-Dropout needs at least 2 passes")
        self.model = model
        self.passes = int(passes)
        self.seed = int(seed)
        self.grid = as_grid(model.grid_ if grid is None else grid)
        self.aggregate = aggregate

    def score(self, X):
        X = self.model._check_X(X)
        risks = [self.model.stochastic_risk(X, rng_for(self.seed, "mc-pass", p)) for p in range(self.passes)]
        return aggregate_spread(lambda p, rows: self.model.survival_from_risk(risks[p][rows], self.grid),
                                self.passes, X.shape[0], self.aggregate)


def ensemble_score(ens, X, grid=None, aggregate="max_std"):
    uq = ens if grid is None and aggregate == ens.aggregate else EnsembleUq(ens.members, grid, aggregate)
    return uq.score(X)


def mc_dropout_score(model, X, grid=None, passes=DEFAULT_PASSES, seed=0, aggregate="max_std"):
    return McDropoutUq(model, passes, seed, grid, aggregate).score(X)
