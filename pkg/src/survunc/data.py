"""Survival datasets: records, curves, CSV ingestion, standardization, splits."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import rng_for

logger = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none", "?"}


class DataError(ValueError):
    """Malformed input data."""


@dataclass(frozen=True)
class SurvivalRecord:
    covariates: np.ndarray
    time: float
    event: int

    def __post_init__(self):
        if not self.time > 0:
            raise DataError(f"time must be positive, got {self.time}")
        if self.event not in (0, 1):
            raise DataError(f"event must be 0 or 1, got {self.event}")


@dataclass(frozen=True)
class Standardizer:
    """Per-column shift/scale fitted on a training partition.

    Columns outside ``columns`` (one-hot indicators) and zero-variance
    columns keep mean 0 and scale 1, i.e. pass through unchanged.
    """

    mean: np.ndarray
    scale: np.ndarray
    skipped: tuple = ()

    @classmethod
    def fit(cls, X, columns=None):
        X = np.asarray(X, dtype=float)
        d = X.shape[1]
        columns = np.ones(d, bool) if columns is None else np.asarray(columns, bool)
        mean = np.zeros(d)
        scale = np.ones(d)
        skipped = []
        for j in np.flatnonzero(columns):
            sd = X[:, j].std()
            if sd == 0 or not np.isfinite(sd):
                skipped.append(j)
                continue
            mean[j] = X[:, j].mean()
            scale[j] = sd
        if skipped:
            warnings.warn(f"zero-variance columns left unscaled: {skipped}", stacklevel=2)
        return cls(mean, scale, tuple(int(j) for j in skipped))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(), "skipped": list(self.skipped)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float), tuple(d.get("skipped", ())))


@dataclass(frozen=True)
class SurvivalDataset:
    """Covariate matrix plus observed times and event flags.

    ``real_columns`` marks the real-valued features (one-hot indicator
    columns are False); only those are touched by standardization.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    feature_names: tuple = ()
    real_columns: np.ndarray | None = None
    standardization: Standardizer | None = None
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.array(self.X, dtype=float))
        time = np.array(self.time, dtype=float).ravel()
        event = np.asarray(self.event).ravel().astype(np.int64)
        if X.shape[0] != time.size or time.size != event.size:
            raise DataError("X, time and event must have the same number of rows")
        if np.any(~(time > 0)) or not np.all(np.isfinite(time)):
            raise DataError("all times must be positive and finite")
        if np.any((event != 0) & (event != 1)):
            raise DataError("events must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates must be finite")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match covariate dimension")
        real = np.ones(X.shape[1], bool) if self.real_columns is None else np.array(self.real_columns, bool)
        for arr in (X, time, event, real):
            arr.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "real_columns", real)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def record(self, i):
        return SurvivalRecord(self.X[i].copy(), float(self.time[i]), int(self.event[i]))

    @property
    def records(self):
        return [self.record(i) for i in range(self.n)]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, X=self.X[idx], time=self.time[idx], event=self.event[idx])

    def uncensored(self):
        return self.subset(np.flatnonzero(self.event == 1))

    def same_content(self, other):
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.event, other.event)
        )


def as_grid(times):
    """Validate a time grid: strictly increasing, non-negative, finite."""
    g = np.asarray(times, dtype=float).ravel()
    if g.size == 0:
        raise ValueError("time grid is empty")
    if not np.all(np.isfinite(g)) or g[0] < 0 or np.any(np.diff(g) <= 0):
        raise ValueError("time grid must be finite, non-negative and strictly increasing")
    return g


def step_eval(grid, values, t):
    """Right-continuous step interpolation of ``values`` (last axis on ``grid``).

    Returns 1 for t below the first grid point. ``values`` may be a vector
    (one curve) or an (n, G) matrix; ``t`` may be a scalar or array.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(grid, t, side="right") - 1
    padded = np.concatenate([np.ones(values.shape[:-1] + (1,)), values], axis=-1)
    return padded[..., np.asarray(idx) + 1]


def step_eval_rows(grid, surv, times):
    """S(times[i] | row i) for an (n, G) survival matrix."""
    idx = np.searchsorted(np.asarray(grid, float), np.asarray(times, float), side="right") - 1
    out = np.ones(len(idx))
    ok = idx >= 0
    out[ok] = surv[np.flatnonzero(ok), idx[ok]]
    return out


@dataclass(frozen=True)
class SurvivalCurve:
    grid: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        g = as_grid(self.grid)
        p = np.asarray(self.probabilities, dtype=float).ravel()
        if p.shape != g.shape:
            raise ValueError("grid and probabilities differ in length")
        if np.any(p < 0) or np.any(p > 1) or np.any(np.diff(p) > 0):
            raise ValueError("survival probabilities must lie in [0, 1] and be non-increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "probabilities", p)

    def __call__(self, t):
        return step_eval(self.grid, self.probabilities, t)


@dataclass(frozen=True)
class SplitAssignment:
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray

    @property
    def sizes(self):
        return len(self.train_indices), len(self.val_indices), len(self.test_indices)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("train_indices", "val_indices", "test_indices")}


def split(n, ratios=(0.6, 0.2, 0.2), seed=0):
    """Random train/val/test partition; floor allocation, remainder to train."""
    if isinstance(n, SurvivalDataset):
        n = n.n
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValueError("need exactly three ratios")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    perm = rng_for(seed, "split").permutation(n)
    n_train = n - n_val - n_test
    return SplitAssignment(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:n_train + n_val]),
        np.sort(perm[n_train + n_val:]),
    )


def standardize(dataset, fit_on):
    """Z-score the real-valued columns with statistics from ``fit_on`` rows.

    Population standard deviation; zero-variance columns are left unscaled
    and listed in ``dataset.notes``.
    """
    idx = np.asarray(fit_on, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("fit_on is empty")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        std = Standardizer.fit(dataset.X[idx], dataset.real_columns)
    msgs = tuple(str(w.message) for w in caught)
    for m in msgs:
        logger.warning(m)
    return replace(dataset, X=std.transform(dataset.X), standardization=std, notes=dataset.notes + msgs)


def _parse_float(value, row, col):
    if value.strip().lower() in _MISSING:
        raise DataError(f"row {row}: missing value in column {col!r}")
    try:
        return float(value)
    except ValueError:
        raise DataError(f"row {row}: column {col!r} is not numeric: {value!r}") from None


def load_csv(path, duration_col, event_col, categorical_cols: Sequence[str] = (), feature_cols=None):
    """Read a headered CSV into a SurvivalDataset.

    Categorical columns are one-hot encoded with categories in order of first
    appearance and encoded names ``col=value``. Rows are numbered from 1
    (first data row) in error messages.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    categorical = list(categorical_cols)
    for col in [duration_col, event_col, *categorical, *(feature_cols or [])]:
        if col not in header:
            raise DataError(f"unknown column {col!r}; header is {header}")
    if feature_cols is None:
        feature_cols = [h for h in header if h not in (duration_col, event_col)]
    if not feature_cols:
        raise DataError("need at least one feature column")
    pos = {h: i for i, h in enumerate(header)}

    times, events, raw = [], [], []
    for r, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        t = _parse_float(row[pos[duration_col]], r, duration_col)
        if not (t > 0 and math.isfinite(t)):
            raise DataError(f"row {r}: column {duration_col!r} must be a positive duration, got {row[pos[duration_col]]!r}")
        ev_text = row[pos[event_col]].strip()
        try:
            ev = float(ev_text)
        except ValueError:
            ev = None
        if ev not in (0.0, 1.0):
            raise DataError(f"row {r}: column {event_col!r} must be 0 or 1, got {ev_text!r}")
        times.append(t)
        events.append(int(ev))
        raw.append((r, row))

    levels = {c: [] for c in categorical}
    for r, row in raw:
        for c in categorical:
            v = row[pos[c]].strip()
            if v.lower() in _MISSING:
                raise DataError(f"row {r}: missing value in column {c!r}")
            if v not in levels[c]:
                levels[c].append(v)

    names, real = [], []
    for c in feature_cols:
        if c in levels:
            names += [f"{c}={v}" for v in levels[c]]
            real += [False] * len(levels[c])
        else:
            names.append(c)
            real.append(True)

    X = np.empty((len(raw), len(names)))
    for i, (r, row) in enumerate(raw):
        vals = []
        for c in feature_cols:
            if c in levels:
                v = row[pos[c]].strip()
                vals += [1.0 if v == lv else 0.0 for lv in levels[c]]
            else:
                vals.append(_parse_float(row[pos[c]], r, c))
        X[i] = vals
    if not raw:
        raise DataError(f"{path}: no data rows")
    return SurvivalDataset(X, np.array(times), np.array(events), tuple(names), np.array(real))


def write_csv(dataset, path, duration_col="duration", event_col="event"):
    """Write encoded covariates with 17 significant digits (exact round trip)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.feature_names, duration_col, event_col])
        for x, t, e in zip(dataset.X, dataset.time, dataset.event):
            w.writerow([*(f"{v:.17g}" for v in x), f"{t:.17g}", int(e)])
    return path
