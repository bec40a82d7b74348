"""Random survival forest (log-rank splits) and CART regression forest."""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np

from .._parallel import parallel_map
from .._rng import derive_seed
from ._trees import (
    apply_forest,
    build_regression_tree,
    build_survival_tree,
    forest_mean_value,
    forest_survival_at,
    forest_survival_grid,
)
from .base import ModelError, NotFittedError, SurvivalModel

logger = logging.getLogger(__name__)

_SEED_MASK = (1 << 63) - 1


def _tree_seed(seed, t):
    return derive_seed(seed, "tree", t) & _SEED_MASK


def _bootstrap(seed, t, n, bootstrap=True):
    if not bootstrap:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(derive_seed(seed, "boot", t))
    return rng.integers(0, n, size=n).astype(np.int64)


class RandomSurvivalForest(SurvivalModel):
    """Bagged log-rank survival trees with Nelson-Aalen leaves.

    Tree ``t`` draws its bootstrap sample and feature subsets from seeds
    derived from ``(seed, t)``, so the forest does not depend on the number
    of worker threads. Every threshold of each sampled feature is scored.
    The forest survival curve is the average of the per-tree curves
    exp(-H_leaf(t)).
    """

    kind = "rsf"
    supports_reseed = True

    def __init__(self, n_estimators=100, min_samples_split=20, min_samples_leaf=5, features_per_split=None,
                 seed=0, threads=None):
        self.n_estimators = int(n_estimators)
        self.min_samples_split = int(min_samples_split)
        self.min_samples_leaf = int(min_samples_leaf)
        self.features_per_split = features_per_split
        self.seed = int(seed)
        self.threads = threads

    def config(self):
        return {
            "n_estimators": self.n_estimators,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
        }

    def reseeded(self, seed):
        return type(self)(**{**self.config(), "seed": seed}, threads=self.threads)

    def fit(self, train, val=None):
        n, d = train.X.shape
        if n < self.min_samples_split:
            raise ModelError(f"need at least min_samples_split={self.min_samples_split} records, got {n}")
        mtry = self.features_per_split or math.ceil(math.sqrt(d))
        mtry = min(int(mtry), d)
        X = np.ascontiguousarray(train.X)
        time = np.ascontiguousarray(train.time)
        event = train.event.astype(float)

        def grow(t):
            boot = _bootstrap(self.seed, t, n)
            return build_survival_tree(X, time, event, boot, mtry, self.min_samples_split,
                                       self.min_samples_leaf, _tree_seed(self.seed, t))

        trees = parallel_map(grow, range(self.n_estimators), self.threads)
        self._assemble(trees)
        if np.all(self.n_nodes_ == 1):
            warnings.warn("no valid split at the root of any tree; forest reduces to single-leaf trees",
                          stacklevel=2)
        self.n_features_ = d
        self.mtry_ = mtry
        self.grid_ = np.unique(time[train.event == 1]) if train.event.any() else np.unique(time)
        self._train_X = X
        self._train_n = n
        return self

    def _assemble(self, trees):
        feats, thrs, lefts, rights, leaves, sizes, offs, ltimes, lchaz = zip(*trees)
        self.n_nodes_ = np.array([f.size for f in feats])
        self.roots_ = np.r_[0, np.cumsum(self.n_nodes_)[:-1]].astype(np.int64)
        n_leaves = np.array([s.size for s in sizes])
        self.leaf_base_ = np.r_[0, np.cumsum(n_leaves)[:-1]].astype(np.int64)
        self.feature_ = np.concatenate(feats)
        self.threshold_ = np.concatenate(thrs)
        self.left_ = np.concatenate(lefts)
        self.right_ = np.concatenate(rights)
        self.leaf_ = np.concatenate(leaves)
        self.leaf_size_ = np.concatenate(sizes)
        entry_base = np.r_[0, np.cumsum([o[-1] for o in offs])[:-1]]
        self.leaf_offsets_ = np.concatenate([[0]] + [o[1:] + b for o, b in zip(offs, entry_base)]).astype(np.int64)
        self.leaf_times_ = np.concatenate(ltimes)
        self.leaf_chaz_ = np.concatenate(lchaz)

    def apply(self, X):
        """Absolute node index of the leaf reached in each tree, shape (n, T)."""
        X = np.ascontiguousarray(self._check_X(X))
        return apply_forest(X, self.roots_, self.feature_, self.threshold_, self.left_, self.right_)

    def _payload(self):
        return self.leaf_, self.leaf_base_, self.leaf_offsets_, self.leaf_times_, self.leaf_chaz_

    def _predict_grid(self, X, grid):
        nodes = apply_forest(np.ascontiguousarray(X), self.roots_, self.feature_, self.threshold_, self.left_, self.right_)
        mask = np.ones(nodes.shape, dtype=np.bool_)
        return forest_survival_grid(nodes, *self._payload(), np.ascontiguousarray(grid, dtype=float), mask)

    def survival_at(self, X, times):
        X = np.ascontiguousarray(self._check_X(X))
        times = np.ascontiguousarray(np.asarray(times, dtype=float).ravel())
        if times.size != X.shape[0]:
            raise ValueError("one time per row required")
        nodes = apply_forest(X, self.roots_, self.feature_, self.threshold_, self.left_, self.right_)
        return forest_survival_at(nodes, *self._payload(), times)

    def leaf_curve(self, tree, leaf_node, grid):
        """exp(-Nelson-Aalen) of one leaf (absolute node index) on ``grid``."""
        lf = self.leaf_base_[tree] + self.leaf_[leaf_node]
        a, b = self.leaf_offsets_[lf], self.leaf_offsets_[lf + 1]
        times, chaz = self.leaf_times_[a:b], self.leaf_chaz_[a:b]
        idx = np.searchsorted(times, grid, side="right") - 1
        h = np.where(idx >= 0, chaz[np.maximum(idx, 0)], 0.0)
        return np.exp(-h)

    def oob_survival(self, grid=None):
        """Out-of-bag survival matrix for the training rows (NaN if never out of bag)."""
        if not hasattr(self, "_train_X"):
            raise NotFittedError("out-of-bag prediction needs the training data of this session")
        grid = self.grid_ if grid is None else np.asarray(grid, dtype=float)
        n = self._train_n
        mask = np.ones((n, self.n_estimators), dtype=np.bool_)
        for t in range(self.n_estimators):
            mask[np.unique(_bootstrap(self.seed, t, n)), t] = False
        nodes = apply_forest(self._train_X, self.roots_, self.feature_, self.threshold_, self.left_, self.right_)
        return forest_survival_grid(nodes, *self._payload(), np.ascontiguousarray(grid), mask)

    _ARRAYS = ("n_nodes_", "roots_", "leaf_base_", "feature_", "threshold_", "left_", "right_", "leaf_",
               "leaf_size_", "leaf_offsets_", "leaf_times_", "leaf_chaz_", "grid_")

    def get_state(self):
        params = {**self.config(), "n_features": self.n_features_, "mtry": self.mtry_}
        return params, {k.rstrip("_"): getattr(self, k) for k in self._ARRAYS}

    @classmethod
    def from_state(cls, params, arrays):
        m = cls(**{k: params[k] for k in ("n_estimators", "min_samples_split", "min_samples_leaf",
                                          "features_per_split", "seed")})
        for k in cls._ARRAYS:
            setattr(m, k, arrays[k.rstrip("_")])
        m.n_features_ = params["n_features"]
        m.mtry_ = params["mtry"]
        return m


class RegressionForest:
    """Bagged CART regression trees with squared-error (variance-reduction) splits.

    Predictions average leaf means, so they stay inside the label range.
    """

    def __init__(self, n_estimators=100, min_samples_leaf=5, min_samples_split=10, max_features=None,
                 bootstrap=True, seed=0, threads=None):
        self.n_estimators = int(n_estimators)
        self.min_samples_leaf = int(min_samples_leaf)
        self.min_samples_split = int(min_samples_split)
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = int(seed)
        self.threads = threads
        self.n_features_ = None

    def config(self):
        return {
            "n_estimators": self.n_estimators,
            "min_samples_leaf": self.min_samples_leaf,
            "min_samples_split": self.min_samples_split,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=float)
        y = np.ascontiguousarray(y, dtype=float).ravel()
        n, d = X.shape
        if n == 0:
            raise ValueError("cannot fit on an empty set")
        mtry = min(int(self.max_features or d), d)

        def grow(t):
            boot = _bootstrap(self.seed, t, n, self.bootstrap)
            return build_regression_tree(X, y, boot, mtry, self.min_samples_split, self.min_samples_leaf,
                                         _tree_seed(self.seed, t))

        trees = parallel_map(grow, range(self.n_estimators), self.threads)
        feats, thrs, lefts, rights, values, sizes = zip(*trees)
        self.n_nodes_ = np.array([f.size for f in feats])
        self.roots_ = np.r_[0, np.cumsum(self.n_nodes_)[:-1]].astype(np.int64)
        self.feature_ = np.concatenate(feats)
        self.threshold_ = np.concatenate(thrs)
        self.left_ = np.concatenate(lefts)
        self.right_ = np.concatenate(rights)
        self.value_ = np.concatenate(values)
        self.node_size_ = np.concatenate(sizes)
        self.n_features_ = d
        return self

    def apply(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_:
            raise ValueError(f"expected covariates of dimension {self.n_features_}, got shape {X.shape}")
        return apply_forest(X, self.roots_, self.feature_, self.threshold_, self.left_, self.right_)

    def predict(self, X):
        return forest_mean_value(self.apply(X), self.value_)

    _ARRAYS = ("n_nodes_", "roots_", "feature_", "threshold_", "left_", "right_", "value_", "node_size_")

    def get_state(self):
        return {**self.config(), "n_features": self.n_features_}, {k.rstrip("_"): getattr(self, k) for k in self._ARRAYS}

    @classmethod
    def from_state(cls, params, arrays):
        m = cls(**{k: params[k] for k in ("n_estimators", "min_samples_leaf", "min_samples_split",
                                          "max_features", "bootstrap", "seed")})
        for k in cls._ARRAYS:
            setattr(m, k, arrays[k.rstrip("_")])
        m.n_features_ = params["n_features"]
        return m
