"""Evaluation metrics for survival predictions and uncertainty scores.

Survival predictions are passed as an (n, G) matrix ``surv`` on a sorted
``grid``; S(t|x_i) between grid points is the right-continuous step value
and 1 before the first grid point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.stats import rankdata

from ._parallel import parallel_map
from ._rng import rng_for
from .data import as_grid, step_eval_rows
from .estimators import censoring_km, left_limit

logger = logging.getLogger(__name__)

IBS_GRID_POINTS = 64
BOOTSTRAP_ITERATIONS = 100
MAX_SKIPPED_FRACTION = 0.10
EXACT_WILCOXON_MAX_N = 25


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    n_used: int

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class BootstrapSummary:
    mean: float
    std: float
    replicates: np.ndarray
    n_skipped: int = 0
    meta: dict = field(default_factory=dict)


def _grid_index(grid, t):
    return np.searchsorted(np.asarray(grid, float), np.asarray(t, float), side="right") - 1


# ---------------------------------------------------------------- concordance

@njit(cache=True, nogil=True)
def _ctd_counts(surv, k, time, event, idx):
    num = 0.0
    den = 0.0
    m = idx.shape[0]
    for a in range(m):
        i = idx[a]
        if event[i] == 0:
            continue
        ki = k[i]
        si = surv[i, ki] if ki >= 0 else 1.0
        ti = time[i]
        for b in range(m):
            j = idx[b]
            if time[j] > ti:
                den += 1.0
                sj = surv[j, ki] if ki >= 0 else 1.0
                if si < sj:
                    num += 1.0
    return num, den


def c_td(surv, grid, time, event, indices=None):
    """Time-dependent concordance (exact double sum, strict inequalities).

    Over ordered pairs with ``event[i] = 1`` and ``time[i] < time[j]``, the
    fraction for which S(t_i|x_i) < S(t_i|x_j). ``indices`` selects (with
    repetition allowed) the subjects taking part, e.g. a bootstrap draw.
    """
    surv = np.ascontiguousarray(surv, dtype=float)
    time = np.ascontiguousarray(time, dtype=float)
    event = np.ascontiguousarray(event, dtype=np.int64)
    k = _grid_index(grid, time)
    idx = np.arange(time.size) if indices is None else np.ascontiguousarray(indices, dtype=np.int64)
    num, den = _ctd_counts(surv, k, time, event, idx)
    if den == 0:
        raise MetricError("no comparable pairs for C^td")
    return MetricValue("c_td", num / den, int(np.count_nonzero(event[idx])))


# ------------------------------------------------------------------- Brier

def ibs_grid(time, event, n_points=IBS_GRID_POINTS, upper=None):
    """Quantiles of the event times, closed by ``upper`` (max observed time)."""
    time = np.asarray(time, dtype=float)
    ev = time[np.asarray(event) == 1]
    if ev.size == 0:
        raise MetricError("no events to build an evaluation grid")
    upper = float(time.max()) if upper is None else float(upper)
    q = np.quantile(ev, np.linspace(0.0, 1.0, n_points - 1))
    g = np.unique(np.append(q[q < upper], upper))
    if g.size < 2:
        raise MetricError("evaluation grid has fewer than 2 points")
    return g


def brier_terms(surv, grid, time, event, eval_times, censor=None):
    """Per-sample IPCW Brier summands on ``eval_times``.

    Returns ``(terms, kept)``, both (n, T). A summand is kept unless its
    weight denominator (G(t_i-) for an observed event, G(t) for a subject
    still at risk) is zero; summands that carry no indicator are kept as 0.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    eval_times = np.asarray(eval_times, dtype=float)
    if censor is None:
        censor = censoring_km(time, event)
    s = _step_matrix(surv, grid, eval_times)
    g_left = left_limit(censor, time)
    g_t = censor(eval_times)
    dead = (time[:, None] <= eval_times[None, :]) & (event[:, None] == 1)
    alive = time[:, None] > eval_times[None, :]
    w_dead = np.broadcast_to(g_left[:, None], dead.shape)
    w_alive = np.broadcast_to(g_t[None, :], alive.shape)
    kept = ~((dead & (w_dead <= 0)) | (alive & (w_alive <= 0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(dead & kept, s ** 2 / w_dead, 0.0) + np.where(alive & kept, (1.0 - s) ** 2 / w_alive, 0.0)
    dropped = int((~kept).sum())
    if dropped:
        logger.info("dropped %d Brier summands with zero censoring weight", dropped)
    return terms, kept


def _step_matrix(surv, grid, times):
    """(n, T) step values of every row at every time."""
    k = _grid_index(grid, times)
    surv = np.asarray(surv, dtype=float)
    out = np.ones((surv.shape[0], k.size))
    ok = k >= 0
    out[:, ok] = surv[:, k[ok]]
    return out


def brier(surv, grid, time, event, t, censor=None):
    """IPCW Brier score BS(t) at a single time."""
    terms, kept = brier_terms(surv, grid, time, event, [t], censor)
    n_used = int(kept.sum())
    if n_used == 0:
        raise MetricError(f"every Brier summand at t={t} has zero weight")
    return MetricValue("brier", float(terms[:, 0].sum() / n_used), n_used)


def _integrate(values, eval_times):
    span = eval_times[-1] - eval_times[0]
    return np.trapezoid(values, eval_times, axis=-1) / span


def ibs(surv, grid, time, event, eval_times=None, censor=None, indices=None):
    """Integrated Brier score: trapezoid rule over ``eval_times`` divided by the span."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if eval_times is None:
        eval_times = ibs_grid(time, event)
    eval_times = np.asarray(eval_times, dtype=float)
    if eval_times.size < 2:
        raise MetricError("IBS needs at least 2 evaluation times")
    if censor is None:
        censor = censoring_km(time, event)
    idx = np.arange(time.size) if indices is None else np.asarray(indices)
    terms, kept = brier_terms(np.asarray(surv)[idx], grid, time[idx], event[idx], eval_times, censor)
    counts = kept.sum(axis=0)
    if np.any(counts == 0):
        raise MetricError("an evaluation time has no usable Brier summand")
    bs = terms.sum(axis=0) / counts
    return MetricValue("ibs", float(_integrate(bs, eval_times)), int(idx.size))


def per_sample_ibs(surv, grid, time, event, eval_times=None, censor=None):
    """Each subject's Brier summand integrated over ``eval_times`` and divided by the span.

    Dropped summands count as 0, so on data whose censoring weights never
    vanish the mean over subjects equals :func:`ibs`.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if eval_times is None:
        eval_times = ibs_grid(time, event)
    eval_times = np.asarray(eval_times, dtype=float)
    if eval_times.size < 2:
        raise MetricError("IBS needs at least 2 evaluation times")
    if censor is None:
        censor = censoring_km(time, event)
    terms, _ = brier_terms(surv, grid, time, event, eval_times, censor)
    return _integrate(terms, eval_times)


# ---------------------------------------------------------- median survival

def median_survival(surv, grid):
    """min{t : S(t) <= 0.5} per row; rows that never reach 0.5 get the last grid time.

    Returns ``(median, flagged)``.
    """
    grid = as_grid(grid)
    surv = np.atleast_2d(np.asarray(surv, dtype=float))
    below = surv <= 0.5
    flagged = ~below.any(axis=1)
    first = np.argmax(below, axis=1)
    med = np.where(flagged, grid[-1], grid[first])
    return med, flagged


def median_survival_diff(surv, grid, t_event):
    """|median survival - event time|; returns ``(diff, flagged)``."""
    med, flagged = median_survival(surv, grid)
    return np.abs(med - np.asarray(t_event, dtype=float)), flagged


# ------------------------------------------------------------- correlation

def pearson(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size or a.size < 2:
        raise MetricError("pearson needs two vectors of equal length >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(da @ da), np.sqrt(db @ db)
    if sa == 0 or sb == 0:
        raise MetricError("pearson correlation is undefined for a constant input")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


# ----------------------------------------------------------- classification

def _check_classes(neg, pos):
    neg = np.asarray(neg, dtype=float).ravel()
    pos = np.asarray(pos, dtype=float).ravel()
    if neg.size == 0 or pos.size == 0:
        raise MetricError("both classes must be non-empty")
    return neg, pos


def auroc(neg_scores, pos_scores):
    """Mann-Whitney estimate of P(pos > neg) + 0.5 P(pos = neg)."""
    neg, pos = _check_classes(neg_scores, pos_scores)
    ranks = rankdata(np.concatenate([neg, pos]))
    u = ranks[neg.size:].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def auprc(neg_scores, pos_scores):
    """Average precision: sum over distinct thresholds of (R_k - R_{k-1}) P_k."""
    neg, pos = _check_classes(neg_scores, pos_scores)
    scores = np.concatenate([neg, pos])
    labels = np.concatenate([np.zeros(neg.size), np.ones(pos.size)])
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    precision = tp / (last + 1)
    recall = tp / pos.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


# --------------------------------------------------------------- bootstrap

def bootstrap(metric_fn, indices, b=BOOTSTRAP_ITERATIONS, seed=0, threads=None):
    """Resample ``indices`` with replacement ``b`` times and evaluate ``metric_fn``.

    Replicate ``r`` draws from ``rng_for(seed, "bootstrap", r)``. Replicates
    whose metric raises a ValueError are skipped and counted; more than 10%
    skipped is an error. ``replicates`` holds NaN at skipped positions.
    """
    if b < 2:
        raise ValueError("bootstrap needs b >= 2")
    indices = np.asarray(indices)
    if indices.size == 0:
        raise MetricError("nothing to resample")

    def one(r):
        draw = indices[rng_for(seed, "bootstrap", r).integers(0, indices.size, indices.size)]
        try:
            return float(metric_fn(draw))
        except ValueError as exc:
            logger.debug("bootstrap replicate %d skipped: %s", r, exc)
            return np.nan

    reps = np.array(parallel_map(one, range(b), threads))
    skipped = int(np.isnan(reps).sum())
    if skipped > MAX_SKIPPED_FRACTION * b:
        raise MetricError(f"{skipped} of {b} bootstrap replicates failed")
    ok = reps[~np.isnan(reps)]
    if np.all(ok == ok[0]):
        return BootstrapSummary(float(ok[0]), 0.0, reps, skipped)
    return BootstrapSummary(float(ok.mean()), float(ok.std()), reps, skipped)


# ---------------------------------------------------------------- Wilcoxon

def _exact_signed_rank_cdf(doubled_ranks, w2):
    """P(W+ <= w) under random signs; ranks doubled so they are integers."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    probs = counts / counts.sum()
    return float(probs[: int(math.floor(w2 + 1e-9)) + 1].sum())


def wilcoxon_signed_rank(a, b):
    """Two-sided Wilcoxon signed-rank test.

    Zero differences are dropped; tied magnitudes get average ranks. The
    statistic is min(W+, W-). The p-value is exact (full sign distribution)
    for up to 25 non-zero differences, otherwise the normal approximation
    with tie-corrected variance and continuity correction.

    Returns
    -------
    statistic : float
    p_value : float
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise MetricError("samples differ in length")
    if a.size < 6:
        raise MetricError("wilcoxon_signed_rank needs at least 6 pairs")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise MetricError("all differences are zero")
    n = d.size
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        p = 2.0 * _exact_signed_rank_cdf(np.round(2 * ranks), 2 * stat)
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        z = max(abs(stat - mean) - 0.5, 0.0) / math.sqrt(var)
        p = math.erfc(z / math.sqrt(2.0))
    return stat, float(min(p, 1.0))
