"""Compiled tree kernels: log-rank survival trees and variance-reduction CART.

Trees are stored flat. For node ``k``: ``feature[k] < 0`` marks a leaf whose
payload index is ``leaf[k]``; otherwise samples with
``x[feature[k]] <= threshold[k]`` go to ``left[k]``, the rest to ``right[k]``.
Node indices are local to the tree; forests concatenate trees and keep a
per-tree node offset.
"""

import numpy as np
from numba import njit

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _next_u64(state):
    # splitmix64
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _U30)) * _M1
    z = (z ^ (z >> _U27)) * _M2
    return z ^ (z >> _U31)


@njit(cache=True)
def _sample_features(state, d, k):
    feats = np.arange(d)
    for i in range(k):
        j = i + np.int64(_next_u64(state) % np.uint64(d - i))
        tmp = feats[i]
        feats[i] = feats[j]
        feats[j] = tmp
    return feats[:k].copy()


@njit(cache=True)
def _threshold(lo, hi):
    t = lo + (hi - lo) / 2.0
    if t >= hi:
        t = lo
    return t


@njit(cache=True)
def _presort(Xb, extra):
    """Row-position orders per column of ``Xb`` (plus ``extra`` as a last row)."""
    n, d = Xb.shape
    k = d + (1 if extra.shape[0] == n else 0)
    orders = np.empty((k, n), dtype=np.int64)
    for f in range(d):
        orders[f] = np.argsort(Xb[:, f], kind="mergesort")
    if k > d:
        orders[d] = np.argsort(extra, kind="mergesort")
    return orders


@njit(cache=True)
def _partition(orders, lo, hi, goes_left, tmp):
    """Stable in-place partition of every order row's [lo, hi) slice."""
    nl = 0
    for r in range(orders.shape[0]):
        a = lo
        b = 0
        for i in range(lo, hi):
            row = orders[r, i]
            if goes_left[row]:
                orders[r, a] = row
                a += 1
            else:
                tmp[b] = row
                b += 1
        for i in range(b):
            orders[r, a + i] = tmp[i]
        nl = a - lo
    return nl


@njit(cache=True)
def _fenwick_add(tree, i, v):
    i += 1
    m = tree.shape[0] - 1
    while i <= m:
        tree[i] += v
        i += i & (-i)


@njit(cache=True)
def _fenwick_prefix(tree, i):
    # sum over indices 0..i
    i += 1
    s = 0.0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def _node_times(tb, eb, torder, lo, hi, tloc):
    """Distinct times of a node (ascending): sets tloc per row, returns tables."""
    m = 0
    prev = -np.inf
    for i in range(lo, hi):
        t = tb[torder[i]]
        if t > prev:
            m += 1
            prev = t
    times = np.empty(m)
    at_risk = np.zeros(m)
    deaths = np.zeros(m)
    k = -1
    prev = -np.inf
    for i in range(lo, hi):
        row = torder[i]
        t = tb[row]
        if t > prev:
            k += 1
            times[k] = t
            prev = t
        tloc[row] = k
        at_risk[k] += 1.0
        deaths[k] += eb[row]
    acc = 0.0
    for k in range(m - 1, -1, -1):
        acc += at_risk[k]
        at_risk[k] = acc
    return times, at_risk, deaths


@njit(cache=True)
def _logrank_sweep(order_f, lo, hi, vals, tloc, eb, at_risk, deaths, msl, fen_cnt, fen_b):
    """Best squared log-rank statistic over all thresholds of one feature.

    Moves rows into the left group in feature order. The numerator and the
    linear part of the variance update in O(1) from prefix sums; the quadratic
    part sum_k b_k YL_k^2 needs sum_{k<=q} b_k YL_k, kept with two Fenwick
    trees (counts and B[k_j] per left row). Returns (stat, position).
    """
    m = at_risk.shape[0]
    P1 = np.empty(m)
    PL = np.empty(m)
    B = np.empty(m)
    c1 = 0.0
    cl = 0.0
    cb = 0.0
    for k in range(m):
        y = at_risk[k]
        dk = deaths[k]
        c1 += dk / y
        a = dk * (y - dk) / (y - 1.0) if y > 1 else 0.0
        cl += a / y
        cb += a / (y * y)
        P1[k] = c1
        PL[k] = cl
        B[k] = cb
    fen_cnt[: m + 1] = 0.0
    fen_b[: m + 1] = 0.0
    nn = hi - lo
    U = 0.0
    L = 0.0
    Q = 0.0
    nleft = 0
    best = 0.0
    best_p = -1
    for p in range(1, nn - msl + 1):
        row = order_f[lo + p - 1]
        kj = tloc[row]
        U += eb[row] - P1[kj]
        L += PL[kj]
        S = _fenwick_prefix(fen_b[: m + 1], kj) + (nleft - _fenwick_prefix(fen_cnt[: m + 1], kj)) * B[kj]
        Q += 2.0 * S + B[kj]
        _fenwick_add(fen_cnt[: m + 1], kj, 1.0)
        _fenwick_add(fen_b[: m + 1], kj, B[kj])
        nleft += 1
        if p < msl or vals[order_f[lo + p - 1]] >= vals[order_f[lo + p]]:
            continue
        V = L - Q
        if V > 1e-10:
            stat = U * U / V
            if stat > best * (1.0 + 1e-12) + 1e-15:
                best = stat
                best_p = p
    return best, best_p


@njit(cache=True)
def logrank_statistic(time, event, left):
    """Squared standardized log-rank statistic comparing ``left`` against the rest."""
    n = time.shape[0]
    torder = np.argsort(time, kind="mergesort")
    tloc = np.empty(n, dtype=np.int64)
    times, at_risk, deaths = _node_times(time, event, torder, 0, n, tloc)
    m = times.shape[0]
    yl = np.zeros(m)
    dl = np.zeros(m)
    for i in range(n):
        if left[i]:
            yl[tloc[i]] += 1.0
            dl[tloc[i]] += event[i]
    acc = 0.0
    num = 0.0
    var = 0.0
    for k in range(m - 1, -1, -1):
        acc += yl[k]
        dk = deaths[k]
        if dk > 0:
            y = at_risk[k]
            frac = acc / y
            num += dl[k] - frac * dk
            if y > 1:
                var += frac * (1.0 - frac) * (y - dk) / (y - 1.0) * dk
    if var <= 1e-12:
        return 0.0
    return num * num / var


@njit(cache=True, nogil=True)
def build_survival_tree(X, time, event, boot, mtry, min_samples_split, min_samples_leaf, seed):
    """Grow one log-rank survival tree on the bootstrap rows ``boot``.

    Every threshold between distinct values of each sampled feature is
    scored. Returns node arrays plus leaf payload: per leaf, the distinct
    event times in the leaf and the Nelson-Aalen cumulative hazard there.
    """
    n = boot.shape[0]
    d = X.shape[1]
    Xb = np.empty((n, d))
    tb = np.empty(n)
    eb = np.empty(n)
    for r in range(n):
        Xb[r] = X[boot[r]]
        tb[r] = time[boot[r]]
        eb[r] = event[boot[r]]
    orders = _presort(Xb, tb)
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    leaf = np.full(cap, -1, dtype=np.int64)
    leaf_size = np.zeros(cap, dtype=np.int64)
    leaf_offsets = np.zeros(cap + 1, dtype=np.int64)
    leaf_times = np.empty(n)
    leaf_chaz = np.empty(n)
    tloc = np.empty(n, dtype=np.int64)
    goes_left = np.zeros(n, dtype=np.bool_)
    tmp = np.empty(n, dtype=np.int64)
    fen_cnt = np.zeros(n + 1)
    fen_b = np.zeros(n + 1)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    n_nodes = 1
    n_leaves = 0
    n_entries = 0

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        nn = hi - lo
        times, at_risk, deaths = _node_times(tb, eb, orders[d], lo, hi, tloc)
        m = times.shape[0]
        n_events = 0.0
        for k in range(m):
            n_events += deaths[k]

        best_stat = 0.0
        best_feat = -1
        best_thr = 0.0
        if nn >= min_samples_split and m >= 2 and n_events > 0:
            feats = _sample_features(state, d, mtry)
            for fi in range(mtry):
                f = feats[fi]
                stat, p = _logrank_sweep(orders[f], lo, hi, Xb[:, f], tloc, eb, at_risk, deaths,
                                         min_samples_leaf, fen_cnt, fen_b)
                if p > 0 and stat > best_stat * (1.0 + 1e-12) + 1e-15:
                    best_stat = stat
                    best_feat = f
                    best_thr = _threshold(Xb[orders[f, lo + p - 1], f], Xb[orders[f, lo + p], f])

        if best_feat < 0:
            feature[node] = -1
            leaf[node] = n_leaves
            leaf_size[n_leaves] = nn
            h = 0.0
            for k in range(m):
                if deaths[k] > 0:
                    h += deaths[k] / at_risk[k]
                    leaf_times[n_entries] = times[k]
                    leaf_chaz[n_entries] = h
                    n_entries += 1
            n_leaves += 1
            leaf_offsets[n_leaves] = n_entries
            continue

        for i in range(lo, hi):
            row = orders[0, i]
            goes_left[row] = Xb[row, best_feat] <= best_thr
        nl = _partition(orders, lo, hi, goes_left, tmp)
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # push right first so the left subtree is grown first
        stack_node[sp] = n_nodes + 1
        stack_lo[sp] = lo + nl
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = n_nodes
        stack_lo[sp] = lo
        stack_hi[sp] = lo + nl
        sp += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf[:n_nodes].copy(),
        leaf_size[:n_leaves].copy(),
        leaf_offsets[: n_leaves + 1].copy(),
        leaf_times[:n_entries].copy(),
        leaf_chaz[:n_entries].copy(),
    )


@njit(cache=True, nogil=True)
def build_regression_tree(X, y, boot, mtry, min_samples_split, min_samples_leaf, seed):
    """Grow one CART regression tree (squared-error reduction) on rows ``boot``.

    Leaf values are means computed as ``y0 + mean(y - y0)`` so a leaf of
    identical labels reproduces the label exactly.
    """
    n = boot.shape[0]
    d = X.shape[1]
    Xb = np.empty((n, d))
    yb = np.empty(n)
    for r in range(n):
        Xb[r] = X[boot[r]]
        yb[r] = y[boot[r]]
    orders = _presort(Xb, np.empty(0))
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    size = np.zeros(cap, dtype=np.int64)
    goes_left = np.zeros(n, dtype=np.bool_)
    tmp = np.empty(n, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        nn = hi - lo
        y0 = yb[orders[0, lo]]
        total = 0.0
        pure = True
        for i in range(lo, hi):
            v = yb[orders[0, i]] - y0
            total += v
            if v != 0.0:
                pure = False
        value[node] = y0 + total / nn
        size[node] = nn

        best_gain = 0.0
        best_feat = -1
        best_thr = 0.0
        if nn >= min_samples_split and not pure:
            feats = _sample_features(state, d, mtry)
            for fi in range(mtry):
                f = feats[fi]
                cs = 0.0
                for p in range(1, nn - min_samples_leaf + 1):
                    row = orders[f, lo + p - 1]
                    cs += yb[row] - y0
                    if p < min_samples_leaf or Xb[row, f] >= Xb[orders[f, lo + p], f]:
                        continue
                    # SSE reduction: sL^2/nL + sR^2/nR - s^2/n (labels shifted by y0)
                    sr = total - cs
                    gain = cs * cs / p + sr * sr / (nn - p) - total * total / nn
                    if gain > best_gain * (1.0 + 1e-12) + 1e-15:
                        best_gain = gain
                        best_feat = f
                        best_thr = _threshold(Xb[row, f], Xb[orders[f, lo + p], f])

        if best_feat < 0:
            continue
        for i in range(lo, hi):
            row = orders[0, i]
            goes_left[row] = Xb[row, best_feat] <= best_thr
        nl = _partition(orders, lo, hi, goes_left, tmp)
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[sp] = n_nodes + 1
        stack_lo[sp] = lo + nl
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = n_nodes
        stack_lo[sp] = lo
        stack_hi[sp] = lo + nl
        sp += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        size[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def apply_forest(X, roots, feature, threshold, left, right):
    """Absolute node index reached by each row in each tree, shape (n, T)."""
    n = X.shape[0]
    T = roots.shape[0]
    out = np.empty((n, T), dtype=np.int64)
    for i in range(n):
        for t in range(T):
            k = roots[t]
            while feature[k] >= 0:
                if X[i, feature[k]] <= threshold[k]:
                    k = roots[t] + left[k]
                else:
                    k = roots[t] + right[k]
            out[i, t] = k
    return out


@njit(cache=True, nogil=True)
def forest_survival_grid(nodes, leaf, leaf_base, leaf_offsets, leaf_times, leaf_chaz, grid, tree_mask):
    """Average over trees of exp(-H_leaf(t)) on a sorted grid, shape (n, G).

    Each tree adds its leaf curve's downward jumps at the first grid point at
    or after each leaf event time; a running sum per row then gives the
    right-continuous step curve. ``tree_mask[i, t]`` selects contributing
    trees (all for ordinary prediction, out-of-bag ones for OOB).
    """
    n, T = nodes.shape
    G = grid.shape[0]
    pos = np.searchsorted(grid, leaf_times, side="left")
    out = np.zeros((n, G))
    for i in range(n):
        cnt = 0
        row = out[i]
        for t in range(T):
            if not tree_mask[i, t]:
                continue
            cnt += 1
            lf = leaf_base[t] + leaf[nodes[i, t]]
            prev = 1.0
            for e in range(leaf_offsets[lf], leaf_offsets[lf + 1]):
                g = pos[e]
                if g >= G:
                    break
                s = np.exp(-leaf_chaz[e])
                row[g] += s - prev
                prev = s
        if cnt == 0:
            row[:] = np.nan
            continue
        acc = float(cnt)
        for g in range(G):
            acc += row[g]
            row[g] = acc / cnt
    return out


@njit(cache=True, nogil=True)
def forest_survival_at(nodes, leaf, leaf_base, leaf_offsets, leaf_times, leaf_chaz, times):
    """Average over trees of exp(-H_leaf(times[i])) for each row i."""
    n, T = nodes.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(T):
            lf = leaf_base[t] + leaf[nodes[i, t]]
            a = leaf_offsets[lf]
            b = leaf_offsets[lf + 1]
            j = np.searchsorted(leaf_times[a:b], times[i], side="right")
            h = 0.0
            if j > 0:
                h = leaf_chaz[a + j - 1]
            acc += np.exp(-h)
        out[i] = acc / T
    return out


@njit(cache=True, nogil=True)
def forest_mean_value(nodes, value):
    """Shifted-mean average of leaf values across trees (exact for constants)."""
    n, T = nodes.shape
    out = np.empty(n)
    for i in range(n):
        v0 = value[nodes[i, 0]]
        s = 0.0
        for t in range(T):
            s += value[nodes[i, t]] - v0
        out[i] = v0 + s / T
    return out
