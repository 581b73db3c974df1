"""Bagged CART regression trees, compiled with numba.

Trees are stored as flat node arrays (feature, threshold, left, right,
value); a feature index of -1 marks a leaf. All randomness comes from a
splitmix64 stream seeded per tree, so a forest is a pure function of its
inputs and seed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _next(state):
    s = state[0] + _GOLDEN
    state[0] = s
    z = s
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randint(state, bound):
    # uniform in [0, bound) from the top 53 bits
    u = (_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return int(u * bound)


@njit(cache=True, nogil=True)
def _grow(XT, y, cnt, srt, u, min_leaf, mtry, state, goes_left, buf, feat, thr, left, right, value):
    """Grow one tree on the ``u`` distinct rows held in every ``srt[f, :u]``.

    ``srt[f]`` lists those rows sorted by feature ``f``; ``cnt`` holds the
    bootstrap multiplicity of each row. Node segments are kept sorted in every
    feature by stable partitioning, so split search never sorts.
    """
    d = XT.shape[0]
    order = np.arange(d)
    cap = feat.shape[0]
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = u
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        wsum = 0.0
        total = 0.0
        for k in range(lo, hi):
            r = srt[0, k]
            wsum += cnt[r]
            total += cnt[r] * y[r]
        value[node] = total / wsum
        feat[node] = -1
        if wsum < 2 * min_leaf:
            continue
        parent_score = total * total / wsum
        best_gain = 1e-12 * (abs(parent_score) + 1.0)
        best_f = -1
        best_t = 0.0
        best_wl = 0.0
        # visit features in random order until mtry non-constant ones were tried
        for j in range(d):
            r = j + _randint(state, d - j)
            tmp = order[j]
            order[j] = order[r]
            order[r] = tmp
        tried = 0
        for j in range(d):
            if tried >= mtry:
                break
            f = order[j]
            if XT[f, srt[f, lo]] == XT[f, srt[f, hi - 1]]:
                continue
            tried += 1
            wl = 0.0
            sl = 0.0
            b = XT[f, srt[f, lo]]
            for k in range(lo, hi - 1):
                r = srt[f, k]
                wl += cnt[r]
                sl += cnt[r] * y[r]
                a = b
                b = XT[f, srt[f, k + 1]]
                if a == b or wl < min_leaf:
                    continue
                wr = wsum - wl
                if wr < min_leaf:
                    break
                sr = total - sl
                gain = sl * sl / wl + sr * sr / wr - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_wl = wl
                    t = 0.5 * (a + b)
                    if t >= b:
                        t = a
                    best_t = t
        if best_f < 0:
            continue
        nl = 0
        for k in range(lo, hi):
            r = srt[best_f, k]
            go = 1 if XT[best_f, r] <= best_t else 0
            goes_left[r] = go
            nl += go
        mid = lo + nl
        # children that cannot split again only need the row set, read from srt[0]
        n_part = d
        if best_wl < 2 * min_leaf and wsum - best_wl < 2 * min_leaf:
            n_part = 1
        for g in range(n_part):
            # branch-free stable partition; the left/right pattern is random
            pl = lo
            pr = 0
            for k in range(lo, hi):
                r = srt[g, k]
                go = np.int64(goes_left[r])
                srt[g, pl] = r
                buf[pr] = r
                pl += go
                pr += 1 - go
            for k in range(pr):
                srt[g, mid + k] = buf[k]
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1
        stack_node[top] = n_nodes + 1
        stack_lo[top] = mid
        stack_hi[top] = hi
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True, nogil=True)
def fit_forest(X, y, n_trees, min_leaf, mtry, seeds, bootstrap):
    n, d = X.shape
    XT = np.ascontiguousarray(X.T)
    presort = np.empty((d, n), dtype=np.int32)
    for f in range(d):
        presort[f] = np.argsort(XT[f], kind="mergesort")
    max_nodes = 2 * (n // min_leaf) + 3
    feat = np.full((n_trees, max_nodes), -1, dtype=np.int64)
    thr = np.zeros((n_trees, max_nodes))
    left = np.zeros((n_trees, max_nodes), dtype=np.int64)
    right = np.zeros((n_trees, max_nodes), dtype=np.int64)
    value = np.zeros((n_trees, max_nodes))
    sizes = np.zeros(n_trees, dtype=np.int64)
    state = np.zeros(1, dtype=np.uint64)
    cnt = np.zeros(n)
    srt = np.empty((d, n), dtype=np.int32)
    goes_left = np.zeros(n, dtype=np.uint8)
    buf = np.empty(n, dtype=np.int32)
    for t in range(n_trees):
        state[0] = np.uint64(seeds[t])
        if bootstrap:
            cnt[:] = 0.0
            for k in range(n):
                cnt[_randint(state, n)] += 1.0
        else:
            cnt[:] = 1.0
        u = 0
        for f in range(d):
            u = 0
            for k in range(n):
                r = presort[f, k]
                if cnt[r] > 0:
                    srt[f, u] = r
                    u += 1
        sizes[t] = _grow(XT, y, cnt, srt, u, min_leaf, mtry, state, goes_left, buf,
                         feat[t], thr[t], left[t], right[t], value[t])
    width = sizes.max()
    return (feat[:, :width].copy(), thr[:, :width].copy(), left[:, :width].copy(),
            right[:, :width].copy(), value[:, :width].copy())


@njit(cache=True, nogil=True)
def predict_forest(X, feat, thr, left, right, value):
    n = X.shape[0]
    n_trees = feat.shape[0]
    out = np.zeros(n)
    for t in range(n_trees):
        for i in range(n):
            node = 0
            while feat[t, node] >= 0:
                if X[i, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[i] += value[t, node]
    return out / n_trees
