"""Kaplan-Meier, censoring Kaplan-Meier and Breslow baseline hazard."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SurvivalCurve, SurvivalDataset, as_grid

TIE_CONVENTIONS = ("flip", "events_first")


def _unpack(time, event=None):
    if isinstance(time, SurvivalDataset):
        return time.time, time.event
    if event is None:
        # a sequence of SurvivalRecord
        recs = list(time)
        return np.array([r.time for r in recs], float), np.array([r.event for r in recs], np.int64)
    time = np.asarray(time, dtype=float).ravel()
    event = np.asarray(event).ravel().astype(np.int64)
    if time.size != event.size:
        raise ValueError("time and event differ in length")
    return time, event


def risk_table(time, event):
    """Distinct times with event counts and at-risk counts.

    Returns ``(times, deaths, at_risk, removed)`` where ``at_risk[k]`` counts
    subjects with time >= times[k] and ``removed[k]`` all subjects leaving
    at times[k].
    """
    times, inv = np.unique(time, return_inverse=True)
    deaths = np.bincount(inv, weights=event, minlength=times.size)
    removed = np.bincount(inv, minlength=times.size).astype(float)
    at_risk = removed[::-1].cumsum()[::-1]
    return times, deaths, at_risk, removed


def kaplan_meier(time, event=None):
    """Product-limit estimate of S(t).

    Accepts ``(time, event)`` arrays, a SurvivalDataset, or a list of
    SurvivalRecord. The curve is tabulated on the distinct observed times so
    an all-censored sample yields the constant curve 1.
    """
    time, event = _unpack(time, event)
    if time.size == 0:
        raise ValueError("need at least one record")
    times, deaths, at_risk, _ = risk_table(time, event)
    surv = np.cumprod(1.0 - deaths / at_risk)
    return SurvivalCurve(times, np.clip(surv, 0.0, 1.0))


def censoring_km(time, event=None, tie_convention="flip"):
    """Kaplan-Meier estimate of the censoring survival function G(t).

    ``"flip"`` treats censoring as the event with the usual risk set.
    ``"events_first"`` assumes events tied with a censoring occur first, so
    those subjects leave the censoring risk set before the censoring drop.
    """
    time, event = _unpack(time, event)
    if tie_convention not in TIE_CONVENTIONS:
        raise ValueError(f"tie_convention must be one of {TIE_CONVENTIONS}")
    if tie_convention == "flip":
        return kaplan_meier(time, 1 - event)
    times, deaths, at_risk, _ = risk_table(time, event)
    _, cens, _, _ = risk_table(time, 1 - event)
    risk = at_risk - deaths
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(cens > 0, 1.0 - cens / risk, 1.0)
    return SurvivalCurve(times, np.clip(np.cumprod(factor), 0.0, 1.0))


def left_limit(curve, t):
    """S(t-) of a right-continuous step curve (1 at or before the first grid point)."""
    idx = np.searchsorted(curve.grid, t, side="left") - 1
    padded = np.concatenate([[1.0], curve.probabilities])
    return padded[np.asarray(idx) + 1]


@dataclass(frozen=True)
class CumulativeHazard:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = as_grid(self.grid)
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape != g.shape:
            raise ValueError("grid and values differ in length")
        if np.any(v < 0) or np.any(np.diff(v) < 0):
            raise ValueError("cumulative hazard must be non-negative and non-decreasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        idx = np.searchsorted(self.grid, t, side="right") - 1
        return np.concatenate([[0.0], self.values])[np.asarray(idx) + 1]

    def survival(self, risk=0.0):
        return SurvivalCurve(self.grid, np.exp(-self.values * np.exp(risk)))


def breslow_baseline(time, event, risk_scores):
    """Breslow estimate H0(t) = sum over event times <= t of d / sum_{risk set} exp(risk).

    Tabulated on the distinct event times (on the distinct observed times,
    all zero, when there are no events).
    """
    time, event = _unpack(time, event)
    r = np.asarray(risk_scores, dtype=float).ravel()
    if r.size != time.size:
        raise ValueError("risk_scores not aligned with records")
    if not np.all(np.isfinite(r)):
        raise ValueError("risk scores must be finite")
    if event.sum() == 0:
        return CumulativeHazard(np.unique(time), np.zeros(np.unique(time).size))
    order = np.argsort(-time, kind="stable")
    t_sorted, r_sorted = time[order], r[order]
    # running log of sum exp(r) over subjects with time >= t_sorted[i]
    log_cum = np.logaddexp.accumulate(r_sorted)
    times, inv = np.unique(t_sorted, return_inverse=True)
    # last position (in descending order) of each distinct time covers its whole tie group
    last = np.zeros(times.size, dtype=np.int64)
    np.maximum.at(last, inv, np.arange(t_sorted.size))
    log_risk = log_cum[last]
    deaths = np.bincount(np.unique(time, return_inverse=True)[1], weights=event, minlength=times.size)
    keep = deaths > 0
    inc = deaths[keep] * np.exp(-log_risk[keep])
    return CumulativeHazard(times[keep], np.cumsum(inc))


def nelson_aalen(time, event=None):
    time, event = _unpack(time, event)
    return breslow_baseline(time, event, np.zeros(time.size))


def survival_from_hazard(hazard, grid, risk=None):
    """exp(-H0(t) exp(risk)) on ``grid``; rows per risk score when given."""
    h = hazard(np.asarray(grid, float))
    if risk is None:
        return np.exp(-h)
    return np.exp(-np.outer(np.exp(np.asarray(risk, float)), h))


__all__ = [
    "CumulativeHazard",
    "breslow_baseline",
    "censoring_km",
    "kaplan_meier",
    "left_limit",
    "nelson_aalen",
    "risk_table",
    "survival_from_hazard",
]
