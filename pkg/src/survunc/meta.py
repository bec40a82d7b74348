"""Anchor-based meta-labels and the meta-models that learn them.

A subject with an observed event at ``t_j`` is compared with every anchor
(an uncensored training subject) that outlived it. The base model orders
such a pair correctly when it predicts a strictly lower survival at ``t_j``
for the subject than for the anchor. The meta-label is the fraction of
comparable anchors that are ordered incorrectly; a meta-model regresses it
on the covariates and its prediction is the uncertainty score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from ._rng import derive_seed, rng_for
from .data import Standardizer
from .models.base import ConvergenceError, ModelError, NotFittedError
from .models.forest import RegressionForest
from .models.mlp import MLP, Adam, mlp_from_state, mlp_state, mse_loss
from .models.serialization import dump_state, load_state, read_json, write_json

logger = logging.getLogger(__name__)

DEFAULT_ANCHORS = 50
META_FORMAT = "survunc-metamodel"
ANCHOR_FORMAT = "survunc-anchors"
_LABEL_BLOCK = 512


class MetaError(ModelError):
    pass


@dataclass(frozen=True)
class AnchorSet:
    """Anchors drawn from uncensored training records.

    ``indices`` point into the training dataset the anchors came from.
    """

    indices: np.ndarray
    X: np.ndarray
    times: np.ndarray

    @property
    def k(self):
        return int(self.times.size)

    def to_dict(self):
        return {
            "format": ANCHOR_FORMAT,
            "version": 1,
            "indices": self.indices.tolist(),
            "times": self.times.tolist(),
        }

    @classmethod
    def from_dict(cls, doc, train):
        if doc.get("format") != ANCHOR_FORMAT:
            raise MetaError("not an anchor file")
        idx = np.asarray(doc["indices"], dtype=np.int64)
        return anchors_from_indices(train, idx)


def anchors_from_indices(train, indices):
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise MetaError("an anchor set needs at least one anchor")
    if np.any(train.event[indices] != 1):
        raise MetaError("anchors must be uncensored records")
    return AnchorSet(indices, train.X[indices].copy(), train.time[indices].copy())


def sample_anchors(train, k=DEFAULT_ANCHORS, seed=0, stratify=False):
    """Draw ``k`` distinct uncensored records uniformly at random.

    With ``stratify=True`` the uncensored records are cut into ``k``
    equal-count bins by event time and one anchor is drawn from each bin.
    """
    k = int(k)
    if k < 1:
        raise MetaError("k must be >= 1")
    unc = np.flatnonzero(train.event == 1)
    if unc.size < k:
        raise MetaError(f"only {unc.size} uncensored records for {k} anchors; use a smaller k")
    rng = rng_for(seed, "anchors")
    if stratify:
        by_time = unc[np.argsort(train.time[unc], kind="mergesort")]
        picks = [rng.choice(b) for b in np.array_split(by_time, k)]
        idx = np.sort(np.asarray(picks, dtype=np.int64))
    else:
        idx = np.sort(rng.choice(unc, size=k, replace=False))
    return anchors_from_indices(train, idx)


def compute_meta_label(x, t, anchors, model):
    """Meta-label of one uncensored subject, or ``None`` when no anchor outlived it."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    comparable = t < anchors.times
    den = int(comparable.sum())
    if den == 0:
        return None
    s_j = model.survival_at(x, [t])[0]
    s_a = model.survival_at(anchors.X, np.full(anchors.k, float(t)))
    return float(np.count_nonzero(comparable & (s_j >= s_a))) / den


@dataclass(frozen=True)
class MetaDataset:
    """Covariates and meta-labels of the training records that received a label."""

    X: np.ndarray
    labels: np.ndarray
    source_indices: np.ndarray
    excluded_count: int
    n_censored: int
    n_undefined: int

    @property
    def n(self):
        return int(self.labels.size)


def _label_block(X, t, anchors, model):
    n, K = X.shape[0], anchors.k
    s_j = model.survival_at(X, t)
    s_a = model.survival_at(np.tile(anchors.X, (n, 1)), np.repeat(t, K)).reshape(n, K)
    comparable = t[:, None] < anchors.times[None, :]
    den = comparable.sum(axis=1)
    num = (comparable & (s_j[:, None] >= s_a)).sum(axis=1)
    return num, den


def meta_labels(X, t, anchors, model, threads=None):
    """Vectorised labels for many subjects; NaN where undefined."""
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    blocks = [slice(s, s + _LABEL_BLOCK) for s in range(0, t.size, _LABEL_BLOCK)]
    parts = parallel_map(lambda sl: _label_block(X[sl], t[sl], anchors, model), blocks, threads)
    num = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    den = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def build_meta_dataset(train, anchors, model, threads=None):
    """Label every uncensored training record; censored and undefined ones are excluded."""
    unc = np.flatnonzero(train.event == 1)
    labels = meta_labels(train.X[unc], train.time[unc], anchors, model, threads)
    ok = ~np.isnan(labels)
    n_censored = int(train.n - unc.size)
    n_undefined = int((~ok).sum())
    if not ok.any():
        raise MetaError("no training record received a defined meta-label")
    keep = unc[ok]
    return MetaDataset(train.X[keep].copy(), labels[ok], keep, n_censored + n_undefined, n_censored, n_undefined)


class MetaModel:
    """Uncertainty model U(x) fitted to meta-labels.

    ``kind="rf"`` is a CART regression forest using every feature at each
    split; ``kind="mlp"`` is a [32, 32] ReLU network with a sigmoid output
    trained on squared error with early stopping on a 10% holdout.
    Both produce scores in [0, 1].
    """

    KINDS = ("rf", "mlp")
    RF_DEFAULTS = {"n_estimators": 100, "min_samples_leaf": 5, "min_samples_split": 10}
    MLP_DEFAULTS = {"hidden": (32, 32), "lr": 0.001, "epochs": 300, "batch_size": 64, "patience": 20,
                    "holdout": 0.1}

    def __init__(self, kind="rf", seed=0, threads=None, **params):
        if kind not in self.KINDS:
            raise ValueError(f"meta-model kind must be one of {self.KINDS}")
        self.kind = kind
        self.seed = int(seed)
        self.threads = threads
        defaults = self.RF_DEFAULTS if kind == "rf" else self.MLP_DEFAULTS
        unknown = set(params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {kind} meta-model parameters: {sorted(unknown)}")
        self.params = {**defaults, **params}
        self.n_features_ = None
        self.info_ = {}

    @property
    def fitted(self):
        return self.n_features_ is not None

    def fit(self, meta_ds):
        if meta_ds.n == 0:
            raise MetaError("empty meta-dataset")
        X = np.asarray(meta_ds.X, dtype=float)
        y = np.asarray(meta_ds.labels, dtype=float)
        if self.kind == "rf":
            p = self.params
            self.forest_ = RegressionForest(p["n_estimators"], p["min_samples_leaf"], p["min_samples_split"],
                                            max_features=None, bootstrap=True,
                                            seed=derive_seed(self.seed, "meta-rf") & ((1 << 63) - 1),
                                            threads=self.threads).fit(X, y)
        else:
            self._fit_mlp(X, y)
        self.n_features_ = X.shape[1]
        return self

    def _fit_mlp(self, X, y):
        p = self.params
        self.standardizer_ = Standardizer.fit(X)
        Z = self.standardizer_.transform(X)
        rng = rng_for(self.seed, "meta-mlp", "holdout")
        perm = rng.permutation(y.size)
        n_hold = int(round(p["holdout"] * y.size)) if y.size >= 10 else 0
        hold, fit_idx = perm[:n_hold], perm[n_hold:]
        Zv, yv = (Z[hold], y[hold]) if n_hold else (Z, y)
        net = MLP([Z.shape[1], *p["hidden"], 1], 0.0, "sigmoid", seed=derive_seed(self.seed, "meta-mlp", "init"))
        # start from the constant predictor of the mean label
        m = float(np.clip(y[fit_idx].mean(), 1e-4, 1 - 1e-4))
        net.weights[-1][:] = 0.0
        net.biases[-1][:] = np.log(m / (1.0 - m))
        opt = Adam(net.params, lr=p["lr"])
        val_loss = mse_loss(yv)
        best = (np.inf, net.copy_params(), 0)
        wait = 0
        for epoch in range(int(p["epochs"])):
            order = fit_idx[rng_for(self.seed, "meta-mlp", "epoch", epoch).permutation(fit_idx.size)]
            for s in range(0, order.size, int(p["batch_size"])):
                b = order[s:s + int(p["batch_size"])]
                loss, grads = net.loss_and_grad(Z[b], mse_loss(y[b]))
                if not np.isfinite(loss):
                    raise ConvergenceError(f"meta-model training diverged at epoch {epoch}")
                opt.step(net.params, grads)
            vl, _ = val_loss(net.forward(Zv))
            if vl < best[0] - 1e-10:
                best = (vl, net.copy_params(), epoch)
                wait = 0
            else:
                wait += 1
                if wait >= p["patience"]:
                    break
        net.load_params(best[1])
        self.net_ = net
        self.info_ = {"best_epoch": best[2], "holdout_mse": float(best[0]), "n_holdout": int(n_hold)}

    def _check_X(self, X):
        if not self.fitted:
            raise NotFittedError("meta-model is not fitted")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features_:
            raise ValueError(f"expected covariates of dimension {self.n_features_}, got shape {X.shape}")
        return X

    def score(self, X):
        """Uncertainty in [0, 1] for each covariate row."""
        X = self._check_X(X)
        if self.kind == "rf":
            out = self.forest_.predict(X)
        else:
            out = self.net_.forward(self.standardizer_.transform(X)).ravel()
        return np.clip(out, 0.0, 1.0)

    def to_dict(self):
        params = {"kind": self.kind, "seed": self.seed, "params": _jsonable(self.params),
                  "n_features": self.n_features_, "info": self.info_}
        if self.kind == "rf":
            fparams, arrays = self.forest_.get_state()
            params["forest"] = fparams
        else:
            nparams, arrays = mlp_state(self.net_)
            params["net"] = nparams
            arrays["std_mean"] = self.standardizer_.mean
            arrays["std_scale"] = self.standardizer_.scale
        return dump_state(self.kind, params, arrays, fmt=META_FORMAT)

    @classmethod
    def from_dict(cls, doc):
        kind, params, arrays = load_state(doc, fmt=META_FORMAT)
        p = dict(params["params"])
        if "hidden" in p:
            p["hidden"] = tuple(p["hidden"])
        m = cls(params["kind"], params["seed"], **p)
        m.n_features_ = params["n_features"]
        m.info_ = params.get("info", {})
        if m.kind == "rf":
            m.forest_ = RegressionForest.from_state(params["forest"], arrays)
        else:
            m.net_ = mlp_from_state(params["net"], arrays)
            m.standardizer_ = Standardizer(arrays["std_mean"], arrays["std_scale"])
        return m


def _jsonable(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def fit_meta(meta_ds, kind="rf", seed=0, threads=None, **params):
    return MetaModel(kind, seed, threads, **params).fit(meta_ds)


def score(meta, X):
    return meta.score(X)


class SurvUnc:
    """Post-hoc quantifier: anchors, meta-dataset and a fitted meta-model."""

    def __init__(self, meta_model, anchors=None, meta_info=None):
        self.meta_model = meta_model
        self.anchors = anchors
        self.meta_info = meta_info or {}
        self.kind = f"survunc-{meta_model.kind}"

    @classmethod
    def fit(cls, train, model, kind="rf", k=DEFAULT_ANCHORS, seed=0, stratify=False, threads=None, **params):
        anchors = sample_anchors(train, k, derive_seed(seed, "anchors"), stratify)
        meta_ds = build_meta_dataset(train, anchors, model, threads)
        meta = fit_meta(meta_ds, kind, derive_seed(seed, "meta"), threads, **params)
        info = {"n_pairs": meta_ds.n, "excluded": meta_ds.excluded_count, "n_censored": meta_ds.n_censored,
                "n_undefined": meta_ds.n_undefined, "label_mean": float(meta_ds.labels.mean())}
        return cls(meta, anchors, info)

    def score(self, X):
        return self.meta_model.score(X)


def save_meta_model(meta, path):
    write_json(meta.to_dict(), path)


def load_meta_model(path):
    return MetaModel.from_dict(read_json(path))


def save_anchors(anchors, path):
    write_json(anchors.to_dict(), path)


def load_anchors(path, train):
    return AnchorSet.from_dict(read_json(path), train)
