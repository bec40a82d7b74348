"""Breslow-ties Cox partial likelihood and its derivatives."""

import numpy as np


def _tie_runs(ts):
    """For times sorted descending: index of the first and last member of each run."""
    n = ts.size
    starts = np.r_[True, ts[1:] != ts[:-1]]
    run = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    last = np.r_[first[1:] - 1, n - 1]
    return first[run], last[run]


def partial_loglik(r, time, event):
    """Log partial likelihood and its gradient with respect to the risk scores.

    The risk set of subject i is {j : t_j >= t_i} (Breslow ties).
    Returns ``(ll, dll_dr, aux)``; ``aux`` holds quantities reused by the
    Hessian of the linear model.
    """
    r = np.asarray(r, dtype=float).ravel()
    order = np.argsort(-time, kind="stable")
    rs, ts, es = r[order], time[order], event[order].astype(float)
    first, last = _tie_runs(ts)
    c = rs.max()
    w = np.exp(rs - c)
    s0 = np.cumsum(w)[last]
    ll = float(np.sum(es * (rs - c - np.log(s0))))
    # A_j = sum over events i with t_i <= t_j of 1 / s0_i
    inv = es / s0
    tail = np.cumsum(inv[::-1])[::-1]
    A = tail[first]
    g_sorted = es - w * A
    grad = np.empty_like(g_sorted)
    grad[order] = g_sorted
    return ll, grad, (order, last, w, A, es, s0)


def newton_terms(beta, X, time, event):
    """(loglik, gradient, Hessian) of the linear Cox model at ``beta``."""
    r = X @ beta
    ll, dr, (order, last, w, A, es, s0) = partial_loglik(r, time, event)
    grad = X.T @ dr
    Xs = X[order]
    m = np.cumsum(w[:, None] * Xs, axis=0)[last] / s0[:, None]
    ev = es > 0
    hess = -(Xs.T @ ((w * A)[:, None] * Xs) - m[ev].T @ m[ev])
    return ll, grad, hess
