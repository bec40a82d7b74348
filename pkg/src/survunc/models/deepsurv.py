"""MLP-Cox ("DeepSurv-lite"): a small network replaces the linear predictor."""

from __future__ import annotations

import logging

import numpy as np

from .._rng import derive_seed, rng_for
from ..data import Standardizer
from ..estimators import CumulativeHazard, breslow_baseline
from ._coxph import partial_loglik
from .base import ConvergenceError, ModelError, ProportionalHazardsModel
from .mlp import MLP, Adam, mlp_from_state, mlp_state

logger = logging.getLogger(__name__)


def cox_batch_loss(time, event):
    """Negative log partial likelihood per event, computed within the batch."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    n_events = float(event.sum())

    def fn(out):
        ll, d_r, _ = partial_loglik(out.ravel(), time, event)
        return -ll / n_events, (-d_r / n_events)[:, None]

    return fn


class DeepSurv(ProportionalHazardsModel):
    """Cox model whose log-risk is a ReLU network with dropout.

    Trained with Adam on minibatch partial likelihoods; early stopping on the
    validation partial likelihood (training set when no validation set is
    given). The Breslow baseline is estimated on the full training set with
    the final weights and dropout off.
    """

    kind = "deepsurv"
    supports_dropout = True
    supports_reseed = True

    def __init__(self, hidden=(32,), dropout=0.1, lr=0.01, epochs=100, batch_size=256, patience=10,
                 seed=0, standardize=True):
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        self.lr = float(lr)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.patience = int(patience)
        self.seed = int(seed)
        self.standardize = standardize

    def config(self):
        return {
            "hidden": list(self.hidden),
            "dropout": self.dropout,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "seed": self.seed,
            "standardize": self.standardize,
        }

    def reseeded(self, seed):
        return type(self)(**{**self.config(), "seed": seed})

    def _transform(self, X):
        return self.standardizer_.transform(X) if self.standardizer_ is not None else X

    def _risk(self, X, rng=None):
        return self.net_.forward(self._transform(X), rng=rng).ravel()

    def fit(self, train, val=None):
        if train.event.sum() == 0:
            raise ModelError("cannot fit a Cox-type model without events")
        self.standardizer_ = Standardizer.fit(train.X, train.real_columns) if self.standardize else None
        Z = self._transform(train.X)
        time, event = train.time, train.event
        if val is not None and val.event.sum() > 0:
            Zv, tv, ev = self._transform(val.X), val.time, val.event
        else:
            Zv, tv, ev = Z, time, event

        net = MLP([Z.shape[1], *self.hidden, 1], self.dropout, "identity", seed=derive_seed(self.seed, "init"))
        opt = Adam(net.params, lr=self.lr)
        val_loss_fn = cox_batch_loss(tv, ev)
        best = (np.inf, net.copy_params(), 0)
        skipped = 0
        wait = 0
        for epoch in range(self.epochs):
            rng = rng_for(self.seed, "epoch", epoch)
            perm = rng.permutation(Z.shape[0])
            for start in range(0, perm.size, self.batch_size):
                idx = perm[start:start + self.batch_size]
                if event[idx].sum() == 0:
                    skipped += 1
                    continue
                loss, grads = net.loss_and_grad(Z[idx], cox_batch_loss(time[idx], event[idx]), rng=rng)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise ConvergenceError(f"training diverged at epoch {epoch} (loss {loss})")
                opt.step(net.params, grads)
            vloss, _ = val_loss_fn(net.forward(Zv))
            if not np.isfinite(vloss):
                raise ConvergenceError(f"validation loss is not finite at epoch {epoch}")
            if vloss < best[0] - 1e-9:
                best = (vloss, net.copy_params(), epoch)
                wait = 0
            else:
                wait += 1
                if wait >= self.patience:
                    break
        if skipped:
            logger.warning("skipped %d all-censored minibatches", skipped)
        net.load_params(best[1])
        self.net_ = net
        self.best_epoch_ = best[2]
        self.val_loss_ = float(best[0])
        self.n_features_ = train.d
        self.baseline_ = breslow_baseline(time, event, net.forward(Z).ravel())
        self.grid_ = self.baseline_.grid
        return self

    def stochastic_risk(self, X, rng):
        """Log-risk from one forward pass with dropout active."""
        return self._risk(self._check_X(X), rng=rng)

    def survival_from_risk(self, risk, grid):
        h0 = self.baseline_(np.asarray(grid, dtype=float))
        surv = np.exp(-np.outer(np.exp(risk), h0))
        return np.minimum.accumulate(np.clip(surv, 0.0, 1.0), axis=1)

    def stochastic_survival(self, X, grid, rng):
        """One forward pass with dropout active, as an (n, G) survival matrix."""
        return self.survival_from_risk(self.stochastic_risk(X, rng), grid)

    def get_state(self):
        net_params, arrays = mlp_state(self.net_)
        params = {**self.config(), "net": net_params, "n_features": self.n_features_,
                  "best_epoch": self.best_epoch_, "val_loss": self.val_loss_}
        arrays["baseline_grid"] = self.baseline_.grid
        arrays["baseline_values"] = self.baseline_.values
        if self.standardizer_ is not None:
            arrays["std_mean"] = self.standardizer_.mean
            arrays["std_scale"] = self.standardizer_.scale
        return params, arrays

    @classmethod
    def from_state(cls, params, arrays):
        cfg = {k: params[k] for k in ("hidden", "dropout", "lr", "epochs", "batch_size", "patience", "seed", "standardize")}
        m = cls(**cfg)
        m.net_ = mlp_from_state(params["net"], arrays)
        m.standardizer_ = Standardizer(arrays["std_mean"], arrays["std_scale"]) if "std_mean" in arrays else None
        m.baseline_ = CumulativeHazard(arrays["baseline_grid"], arrays["baseline_values"])
        m.grid_ = m.baseline_.grid
        m.n_features_ = params["n_features"]
        m.best_epoch_ = params["best_epoch"]
        m.val_loss_ = params["val_loss"]
        return m
