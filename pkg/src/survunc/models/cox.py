"""Linear Cox proportional hazards fitted by Newton-Raphson."""

from __future__ import annotations

import logging

import numpy as np

from ..data import Standardizer
from ..estimators import CumulativeHazard, breslow_baseline
from ._coxph import newton_terms
from .base import ConvergenceError, ModelError, ProportionalHazardsModel

logger = logging.getLogger(__name__)

RIDGE = 1e-6


class CoxPH(ProportionalHazardsModel):
    """Cox model with Breslow ties and a Breslow baseline hazard.

    Parameters
    ----------
    tol : float
        Convergence threshold on the Euclidean norm of the log partial
        likelihood gradient.
    max_iter : int
        Newton iterations before giving up.
    standardize : bool
        Z-score real-valued covariates with training statistics before
        fitting; ``beta_`` is expressed on the standardized scale.
    """

    kind = "cox"

    def __init__(self, tol=1e-6, max_iter=100, standardize=True):
        self.tol = tol
        self.max_iter = max_iter
        self.standardize = standardize

    def _transform(self, X):
        return self.standardizer_.transform(X) if self.standardizer_ is not None else X

    def _risk(self, X):
        return self._transform(X) @ self.beta_

    def fit(self, train, val=None):
        if train.event.sum() == 0:
            raise ModelError("cannot fit a Cox model without events")
        self.standardizer_ = Standardizer.fit(train.X, train.real_columns) if self.standardize else None
        Z = self._transform(train.X)
        time, event = train.time, train.event
        beta = np.zeros(Z.shape[1])
        ll, grad, hess = newton_terms(beta, Z, time, event)
        history = [ll]
        it = 0
        while np.linalg.norm(grad) > self.tol:
            if it >= self.max_iter:
                raise ConvergenceError(
                    f"Newton-Raphson did not converge in {self.max_iter} iterations "
                    f"(gradient norm {np.linalg.norm(grad):.3e}); possible separation",
                    grad_norm=float(np.linalg.norm(grad)),
                )
            step = self._newton_step(hess, grad)
            for _ in range(60):
                cand = beta + step
                ll_new, grad_new, hess_new = newton_terms(cand, Z, time, event)
                if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                    break
                step = step / 2
            else:
                raise ConvergenceError("step-halving failed to increase the partial likelihood",
                                       grad_norm=float(np.linalg.norm(grad)))
            beta, ll, grad, hess = cand, ll_new, grad_new, hess_new
            history.append(ll)
            it += 1
        self.beta_ = beta
        self.loglik_history_ = history
        self.convergence_ = (it, float(np.linalg.norm(grad)))
        self.n_features_ = train.d
        self.baseline_ = breslow_baseline(time, event, Z @ beta)
        self.grid_ = self.baseline_.grid
        logger.info("cox converged in %d iterations, |grad| = %.2e", it, self.convergence_[1])
        return self

    @staticmethod
    def _newton_step(hess, grad):
        neg = -hess
        for damping in (0.0, RIDGE):
            try:
                step = np.linalg.solve(neg + damping * np.eye(len(grad)), grad)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(step)):
                return step
        raise ConvergenceError("singular Hessian even after ridge damping", grad_norm=float(np.linalg.norm(grad)))

    def get_state(self):
        params = {
            "tol": self.tol,
            "max_iter": self.max_iter,
            "standardize": self.standardize,
            "n_features": self.n_features_,
            "convergence": list(self.convergence_),
        }
        arrays = {"beta": self.beta_, "baseline_grid": self.baseline_.grid, "baseline_values": self.baseline_.values}
        if self.standardizer_ is not None:
            arrays["std_mean"] = self.standardizer_.mean
            arrays["std_scale"] = self.standardizer_.scale
        return params, arrays

    @classmethod
    def from_state(cls, params, arrays):
        m = cls(params["tol"], params["max_iter"], params["standardize"])
        m.beta_ = arrays["beta"]
        m.standardizer_ = Standardizer(arrays["std_mean"], arrays["std_scale"]) if "std_mean" in arrays else None
        m.baseline_ = CumulativeHazard(arrays["baseline_grid"], arrays["baseline_values"])
        m.grid_ = m.baseline_.grid
        m.n_features_ = params["n_features"]
        m.convergence_ = tuple(params["convergence"])
        return m
