"""The contract every base survival model satisfies."""

from __future__ import annotations

import numpy as np

from ..data import SurvivalCurve, as_grid
from ..estimators import CumulativeHazard


class ModelError(RuntimeError):
    pass


class ConvergenceError(ModelError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class CapabilityError(ModelError):
    pass


class NotFittedError(ModelError):
    pass


class SurvivalModel:
    """Fit on a SurvivalDataset; predict S(t|x) from raw covariates.

    Subclasses implement ``fit``, ``_predict_grid`` and the state hooks used
    by :mod:`survunc.models.serialization`. Predictions on a grid are
    (n, G) arrays; the default grid is the sorted distinct training event
    times.
    """

    kind = "base"
    supports_dropout = False
    supports_reseed = False

    n_features_: int | None = None
    grid_: np.ndarray | None = None

    @property
    def capabilities(self):
        return {"supports_dropout": self.supports_dropout, "supports_reseed": self.supports_reseed}

    @property
    def fitted(self):
        return self.n_features_ is not None

    def _check_X(self, X):
        if not self.fitted:
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features_:
            raise ValueError(f"expected covariates of dimension {self.n_features_}, got shape {X.shape}")
        return X

    def predict_survival(self, X, grid=None):
        X = self._check_X(X)
        grid = self.grid_ if grid is None else as_grid(grid)
        surv = self._predict_grid(X, grid)
        # guard against round-off leaving [0, 1] or breaking monotonicity
        surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0), axis=1)
        return surv

    def predict_curve(self, x, grid=None):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("predict_curve takes a single covariate vector")
        grid = self.grid_ if grid is None else as_grid(grid)
        return SurvivalCurve(grid, self.predict_survival(x[None, :], grid)[0])

    def survival_at(self, X, times):
        """S(times[i] | X[i]) for each row (step interpolation at exactly t_i)."""
        X = self._check_X(X)
        times = np.asarray(times, dtype=float).ravel()
        if times.size != X.shape[0]:
            raise ValueError("one time per row required")
        out = np.empty(times.size)
        # evaluate in blocks on each block's own time grid, keep the diagonal
        for start in range(0, times.size, 256):
            sl = slice(start, start + 256)
            grid, inv = np.unique(times[sl], return_inverse=True)
            surv = self.predict_survival(X[sl], grid)
            out[sl] = surv[np.arange(inv.size), inv]
        return out

    def _predict_grid(self, X, grid):
        raise NotImplementedError

    # serialization hooks
    def get_state(self):
        raise NotImplementedError

    @classmethod
    def from_state(cls, params, arrays):
        raise NotImplementedError


class ProportionalHazardsModel(SurvivalModel):
    """Shared prediction for models of the form S = exp(-H0(t) exp(g(x)))."""

    baseline_: CumulativeHazard | None = None

    def risk_score(self, X):
        X = self._check_X(X)
        return self._risk(X)

    def _risk(self, X):
        raise NotImplementedError

    def _predict_grid(self, X, grid):
        h0 = self.baseline_(grid)
        return np.exp(-np.outer(np.exp(self._risk(X)), h0))

    def survival_at(self, X, times):
        X = self._check_X(X)
        times = np.asarray(times, dtype=float).ravel()
        if times.size != X.shape[0]:
            raise ValueError("one time per row required")
        return np.exp(-self.baseline_(times) * np.exp(self._risk(X)))
