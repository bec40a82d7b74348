"""Selective prediction, misprediction detection and OOD detection protocols.

Every protocol takes a fitted base model (where needed) and uncertainty
scores, either precomputed or from any object with ``score(X)``. The
censoring distribution and the Brier evaluation grid are fitted once on the
full test set and shared by all discard levels and bootstrap replicates.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import derive_seed
from .estimators import censoring_km
from .metrics import (
    BOOTSTRAP_ITERATIONS,
    BootstrapSummary,
    MetricError,
    auprc,
    auroc,
    bootstrap,
    c_td,
    ibs,
    ibs_grid,
    median_survival_diff,
    pearson,
    per_sample_ibs,
)

logger = logging.getLogger(__name__)

DEFAULT_DISCARD = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
HIST_BINS = 30
_PREDICT_BLOCK = 512


class ProtocolError(ValueError):
    pass


def scores_for(quantifier, X):
    """Scores from a quantifier object, or pass an aligned array through."""
    if hasattr(quantifier, "score"):
        return np.asarray(quantifier.score(X), dtype=float)
    s = np.asarray(quantifier, dtype=float).ravel()
    if s.size != np.asarray(X).shape[0]:
        raise ProtocolError("precomputed scores are not aligned with the covariates")
    return s


@dataclass(frozen=True)
class EvalContext:
    """Uncensored test subjects with survival predicted on the times the metrics need."""

    time: np.ndarray
    event: np.ndarray
    surv: np.ndarray
    grid: np.ndarray
    eval_times: np.ndarray
    censor: object
    index: np.ndarray

    @classmethod
    def build(cls, model, test, eval_times=None, censor=None, upper=None):
        if censor is None:
            censor = censoring_km(test.time, test.event)
        if eval_times is None:
            eval_times = ibs_grid(test.time, test.event, upper=upper)
        unc = np.flatnonzero(test.event == 1)
        if unc.size < 2:
            raise ProtocolError("need at least 2 uncensored test subjects")
        grid = np.union1d(test.time[unc], eval_times)
        surv = np.vstack([model.predict_survival(test.X[unc[s:s + _PREDICT_BLOCK]], grid)
                          for s in range(0, unc.size, _PREDICT_BLOCK)])
        return cls(test.time[unc], test.event[unc], surv, grid, np.asarray(eval_times, float), censor, unc)

    def c_td(self, idx=None):
        return c_td(self.surv, self.grid, self.time, self.event, idx).value

    def ibs(self, idx=None):
        return ibs(self.surv, self.grid, self.time, self.event, self.eval_times, self.censor, idx).value


@dataclass(frozen=True)
class SelectiveCurvePoint:
    discard_pct: float
    n_retained: int
    c_td: BootstrapSummary | None
    ibs: BootstrapSummary | None
    c_td_point: float
    ibs_point: float
    flagged: bool = False
    note: str = ""


def discard_order(scores):
    """Indices from most to least uncertain; ties keep input order."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def n_discarded(p, n):
    return int(math.floor(p * n + 1e-9))


def selective_prediction(model, quantifier, test, discard_pcts=DEFAULT_DISCARD, b=BOOTSTRAP_ITERATIONS, seed=0,
                         context=None, threads=None):
    """C^td and IBS on the uncensored test subjects left after discarding the most uncertain.

    For each fraction ``p`` the top ``floor(p * n)`` uncensored subjects by
    score are removed; the retained set is then bootstrapped ``b`` times
    (``b=0`` skips the bootstrap and reports point values only).
    """
    ctx = context or EvalContext.build(model, test)
    scores = scores_for(quantifier, test.X[ctx.index])
    order = discard_order(scores)
    n = ctx.index.size
    points = []
    for p in discard_pcts:
        if not 0.0 <= p < 1.0:
            raise ProtocolError(f"discard fraction must lie in [0, 1), got {p}")
        keep = np.sort(order[n_discarded(p, n):])
        rep_seed = derive_seed(seed, "selective", f"{p:.6f}")
        try:
            c_point, i_point = ctx.c_td(keep), ctx.ibs(keep)
            c_boot = bootstrap(ctx.c_td, keep, b, rep_seed, threads) if b else None
            i_boot = bootstrap(ctx.ibs, keep, b, rep_seed, threads) if b else None
            points.append(SelectiveCurvePoint(float(p), int(keep.size), c_boot, i_boot, c_point, i_point))
        except MetricError as exc:
            logger.warning("discard %.2f flagged: %s", p, exc)
            points.append(SelectiveCurvePoint(float(p), int(keep.size), None, None, math.nan, math.nan, True,
                                              str(exc)))
    return points


@dataclass(frozen=True)
class MispredictionReport:
    rho_ibs: float | None
    rho_median_diff: float | None
    scatter: np.ndarray
    n: int
    n_median_flagged: int
    notes: tuple = field(default_factory=tuple)


def misprediction_report(model, quantifier, test, context=None):
    """Pearson correlation of scores with per-subject IBS and median-survival error.

    Restricted to uncensored test subjects. ``scatter`` columns are
    (test index, score, per-subject IBS, |median - event time|).
    """
    ctx = context or EvalContext.build(model, test)
    if ctx.index.size < 2:
        raise ProtocolError("need at least 2 uncensored test subjects")
    X = test.X[ctx.index]
    scores = scores_for(quantifier, X)
    psi = per_sample_ibs(ctx.surv, ctx.grid, ctx.time, ctx.event, ctx.eval_times, ctx.censor)
    grid = model.grid_
    diffs, flags = [], []
    for s in range(0, X.shape[0], _PREDICT_BLOCK):
        d, f = median_survival_diff(model.predict_survival(X[s:s + _PREDICT_BLOCK], grid), grid,
                                    ctx.time[s:s + _PREDICT_BLOCK])
        diffs.append(d)
        flags.append(f)
    diff = np.concatenate(diffs)
    notes = []
    rho = {}
    for name, other in (("ibs", psi), ("median", diff)):
        try:
            rho[name] = pearson(scores, other)
        except MetricError as exc:
            rho[name] = None
            notes.append(f"rho_{name} undefined: {exc}")
            logger.warning("rho_%s undefined: %s", name, exc)
    scatter = np.column_stack([ctx.index, scores, psi, diff])
    return MispredictionReport(rho["ibs"], rho["median"], scatter, int(ctx.index.size),
                               int(np.count_nonzero(np.concatenate(flags))), tuple(notes))


@dataclass(frozen=True)
class OodReport:
    auroc: float
    auprc: float
    edges: np.ndarray
    ind_counts: np.ndarray
    ood_counts: np.ndarray
    n_ind: int
    n_ood: int


def ood_report(quantifier, ind_X, ood_X, bins=HIST_BINS):
    """AUROC/AUPRC with OOD as the positive class, plus shared-range histograms."""
    ind_X = np.atleast_2d(np.asarray(ind_X, dtype=float))
    ood_X = np.atleast_2d(np.asarray(ood_X, dtype=float))
    if ind_X.shape[0] == 0 or ood_X.shape[0] == 0:
        raise ProtocolError("both IND and OOD sets must be non-empty")
    if ind_X.shape[1] != ood_X.shape[1]:
        raise ProtocolError(f"IND and OOD dimensions differ ({ind_X.shape[1]} vs {ood_X.shape[1]})")
    s_ind = scores_for(quantifier, ind_X)
    s_ood = scores_for(quantifier, ood_X)
    return ood_from_scores(s_ind, s_ood, bins)


def ood_from_scores(s_ind, s_ood, bins=HIST_BINS):
    lo = float(min(s_ind.min(), s_ood.min()))
    hi = float(max(s_ind.max(), s_ood.max()))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return OodReport(auroc(s_ind, s_ood), auprc(s_ind, s_ood), edges,
                     np.histogram(s_ind, edges)[0], np.histogram(s_ood, edges)[0], s_ind.size, s_ood.size)


# ------------------------------------------------------------------ writers

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_selective(points, out_dir):
    out_dir = Path(out_dir)
    rows, reps = [], []
    for pt in points:
        rows.append([pt.discard_pct, pt.n_retained, int(pt.flagged), pt.c_td_point,
                     pt.c_td.mean if pt.c_td else None, pt.c_td.std if pt.c_td else None,
                     pt.ibs_point, pt.ibs.mean if pt.ibs else None, pt.ibs.std if pt.ibs else None])
        for name, summ in (("c_td", pt.c_td), ("ibs", pt.ibs)):
            if summ is not None:
                reps.extend([pt.discard_pct, name, r, v] for r, v in enumerate(summ.replicates))
    _write_rows(out_dir / "selective.csv",
                ["discard_pct", "n_retained", "flagged", "c_td", "c_td_mean", "c_td_std", "ibs", "ibs_mean",
                 "ibs_std"], rows)
    _write_rows(out_dir / "selective_replicates.csv", ["discard_pct", "metric", "replicate", "value"], reps)


def write_mispredict(report, out_dir):
    out_dir = Path(out_dir)
    _write_rows(out_dir / "mispredict.csv", ["metric", "value", "n_used"],
                [["rho_ibs", report.rho_ibs, report.n], ["rho_median_diff", report.rho_median_diff, report.n],
                 ["median_not_reached", report.n_median_flagged, report.n]])
    _write_rows(out_dir / "scatter.csv", ["test_index", "score", "per_sample_ibs", "median_abs_diff"],
                [[int(r[0]), r[1], r[2], r[3]] for r in report.scatter])


def write_ood(report, out_dir):
    out_dir = Path(out_dir)
    _write_rows(out_dir / "ood.csv", ["metric", "value", "n_ind", "n_ood"],
                [["auroc", report.auroc, report.n_ind, report.n_ood],
                 ["auprc", report.auprc, report.n_ind, report.n_ood]])
    _write_rows(out_dir / "hist.csv", ["bin_lo", "bin_hi", "ind_count", "ood_count"],
                [[report.edges[i], report.edges[i + 1], int(report.ind_counts[i]), int(report.ood_counts[i])]
                 for i in range(report.ind_counts.size)])
