"""Compiled event loops for the particle simulator.

Kernels consume random numbers from pre-drawn buffers and return a status
code when they need a refill, hit the stop time, or hit a cap; the Python
driver in ``simulator`` handles refills and snapshots. The position sum is
kept with Neumaier compensation so m = S/n stays exact to rounding.

State arrays shared by all kernels:

* ``st``  float64[4]: t, S_hi, S_lo, pending event time (NaN if none)
* ``cnt`` int64[4]:   events, proposals, events since recompute, log fill
* ``ptr`` int64[3]:   read positions in the exponential, uniform and jump buffers
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

ST_T, ST_SHI, ST_SLO, ST_PENDING = 0, 1, 2, 3
CNT_EVENTS, CNT_PROPOSALS, CNT_SINCE, CNT_LOG = 0, 1, 2, 3

DONE = 0
NEED_EXP = 1
NEED_UNI = 2
NEED_JUMP = 3
EVENT_CAP = 4
OVERFLOW = 5
LOG_FULL = 6


@njit(cache=True)
def rate_value(kind, p, tx, ty, x):
    if kind == 0:
        return math.exp(-p[0] * x)
    elif kind == 1:
        return p[0] if x < 0.0 else p[1]
    elif kind == 2:
        return p[1] + (p[0] - p[1]) * 0.5 * (1.0 - math.tanh(0.5 * x / p[2]))
    elif kind == 3:
        return p[1] + (p[0] - p[1]) * (0.5 - math.atan(x / p[2]) / math.pi)
    else:
        n = tx.size
        if x <= tx[0]:
            return ty[0]
        if x >= tx[n - 1]:
            return ty[n - 1]
        lo = 0
        hi = n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tx[mid] <= x:
                lo = mid
            else:
                hi = mid
        f = (x - tx[lo]) / (tx[hi] - tx[lo])
        return ty[lo] + f * (ty[hi] - ty[lo])


@njit(cache=True)
def _add(st, z):
    # Neumaier compensated accumulation of the position sum
    s = st[ST_SHI]
    t = s + z
    if abs(s) >= abs(z):
        st[ST_SLO] += (s - t) + z
    else:
        st[ST_SLO] += (z - t) + s
    st[ST_SHI] = t


@njit(cache=True)
def compensated_sum(x):
    s = 0.0
    c = 0.0
    for v in x:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s, c


@njit(cache=True)
def _recompute(x, st, cnt):
    s, c = compensated_sum(x)
    old = st[ST_SHI] + st[ST_SLO]
    st[ST_SHI] = s
    st[ST_SLO] = c
    cnt[CNT_SINCE] = 0
    return abs(old - (s + c))


@njit(cache=True)
def _log(cnt, log_t, log_i, log_z, t, i, z):
    k = cnt[CNT_LOG]
    log_t[k] = t
    log_i[k] = i
    log_z[k] = z
    cnt[CNT_LOG] = k + 1


@njit(cache=True)
def direct_kernel(x, st, cnt, ptr, kind, p, tx, ty, t_stop, max_events,
                  exp_buf, uni_buf, jump_buf, log_on, log_t, log_i, log_z,
                  recompute_every, diag):
    """O(n) per event: all rates recomputed, jumper chosen by linear search.

    ``diag`` float64[2]: max recompute drift, min (x_i - m) seen at overflow.
    """
    n = x.size
    rates = np.empty(n)
    while True:
        if cnt[CNT_EVENTS] >= max_events:
            return EVENT_CAP
        if log_on and cnt[CNT_LOG] >= log_t.size:
            return LOG_FULL
        if ptr[1] >= uni_buf.size:
            return NEED_UNI
        if ptr[2] >= jump_buf.size:
            return NEED_JUMP
        m = (st[ST_SHI] + st[ST_SLO]) / n
        R = 0.0
        for j in range(n):
            r = rate_value(kind, p, tx, ty, x[j] - m)
            rates[j] = r
            R += r
        if not (R < math.inf):
            mn = math.inf
            for j in range(n):
                mn = min(mn, x[j] - m)
            diag[1] = mn
            return OVERFLOW
        if math.isnan(st[ST_PENDING]):
            if ptr[0] >= exp_buf.size:
                return NEED_EXP
            st[ST_PENDING] = st[ST_T] + exp_buf[ptr[0]] / R
            ptr[0] += 1
        tn = st[ST_PENDING]
        if tn > t_stop:
            st[ST_T] = t_stop
            return DONE
        target = uni_buf[ptr[1]] * R
        ptr[1] += 1
        acc = 0.0
        i = n - 1
        for j in range(n):
            acc += rates[j]
            if target < acc:
                i = j
                break
        z = jump_buf[ptr[2]]
        ptr[2] += 1
        x[i] += z
        _add(st, z)
        st[ST_T] = tn
        st[ST_PENDING] = math.nan
        cnt[CNT_EVENTS] += 1
        cnt[CNT_PROPOSALS] += 1
        cnt[CNT_SINCE] += 1
        if log_on:
            _log(cnt, log_t, log_i, log_z, tn, i, z)
        if cnt[CNT_SINCE] >= recompute_every:
            diag[0] = max(diag[0], _recompute(x, st, cnt))


@njit(cache=True)
def thinning_kernel(x, st, cnt, ptr, kind, p, tx, ty, a, t_stop, max_events,
                    exp_buf, uni_buf, jump_buf, log_on, log_t, log_i, log_z,
                    recompute_every, diag):
    """Uniformized dynamics for a bounded rate: proposals at total rate n*a,
    a uniformly chosen particle accepts with probability w(x_i - m)/a."""
    n = x.size
    R = n * a
    while True:
        if cnt[CNT_EVENTS] >= max_events:
            return EVENT_CAP
        if log_on and cnt[CNT_LOG] >= log_t.size:
            return LOG_FULL
        if ptr[1] + 1 >= uni_buf.size:
            return NEED_UNI
        if ptr[2] >= jump_buf.size:
            return NEED_JUMP
        if math.isnan(st[ST_PENDING]):
            if ptr[0] >= exp_buf.size:
                return NEED_EXP
            st[ST_PENDING] = st[ST_T] + exp_buf[ptr[0]] / R
            ptr[0] += 1
        tn = st[ST_PENDING]
        if tn > t_stop:
            st[ST_T] = t_stop
            return DONE
        i = int(uni_buf[ptr[1]] * n)
        if i >= n:
            i = n - 1
        u = uni_buf[ptr[1] + 1]
        ptr[1] += 2
        st[ST_T] = tn
        st[ST_PENDING] = math.nan
        cnt[CNT_PROPOSALS] += 1
        m = (st[ST_SHI] + st[ST_SLO]) / n
        if u * a < rate_value(kind, p, tx, ty, x[i] - m):
            z = jump_buf[ptr[2]]
            ptr[2] += 1
            x[i] += z
            _add(st, z)
            cnt[CNT_EVENTS] += 1
            cnt[CNT_SINCE] += 1
            if log_on:
                _log(cnt, log_t, log_i, log_z, tn, i, z)
            if cnt[CNT_SINCE] >= recompute_every:
                diag[0] = max(diag[0], _recompute(x, st, cnt))


@njit(cache=True)
def _fen_build(tree, v):
    n = v.size
    for i in range(n + 1):
        tree[i] = 0.0
    for i in range(n):
        tree[i + 1] = v[i]
    for i in range(1, n + 1):
        j = i + (i & (-i))
        if j <= n:
            tree[j] += tree[i]


@njit(cache=True)
def _fen_add(tree, i, delta):
    n = tree.size - 1
    k = i + 1
    while k <= n:
        tree[k] += delta
        k += k & (-k)


@njit(cache=True)
def _fen_total(tree):
    n = tree.size - 1
    s = 0.0
    k = n
    while k > 0:
        s += tree[k]
        k -= k & (-k)
    return s


@njit(cache=True)
def _fen_search(tree, target):
    # smallest index i with prefix(i+1) > target
    n = tree.size - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    if pos >= n:
        pos = n - 1
    return pos


@njit(cache=True)
def exponential_kernel(x, st, cnt, ptr, beta, ref_arr, v, tree, t_stop, max_events,
                       exp_buf, uni_buf, jump_buf, log_on, log_t, log_i, log_z,
                       recompute_every, diag):
    """Fast path for w(x) = exp(-beta x).

    w(x_i - m) = v_i * exp(beta (m - ref)) with v_i = exp(-beta (x_i - ref)),
    so the total rate is a Fenwick-tree total times one scalar and the
    jumper is found in O(log n). ``ref`` is moved to m (and the tree
    rebuilt) when beta |m - ref| exceeds 30.
    """
    n = x.size
    while True:
        if cnt[CNT_EVENTS] >= max_events:
            return EVENT_CAP
        if log_on and cnt[CNT_LOG] >= log_t.size:
            return LOG_FULL
        if ptr[1] >= uni_buf.size:
            return NEED_UNI
        if ptr[2] >= jump_buf.size:
            return NEED_JUMP
        m = (st[ST_SHI] + st[ST_SLO]) / n
        ref = ref_arr[0]
        if abs(beta * (m - ref)) > 30.0 or cnt[CNT_SINCE] == 0:
            ref = m
            ref_arr[0] = ref
            for j in range(n):
                v[j] = math.exp(-beta * (x[j] - ref))
            _fen_build(tree, v)
        total = _fen_total(tree)
        R = total * math.exp(beta * (m - ref))
        if not (R < math.inf):
            mn = math.inf
            for j in range(n):
                mn = min(mn, x[j] - m)
            diag[1] = mn
            return OVERFLOW
        if math.isnan(st[ST_PENDING]):
            if ptr[0] >= exp_buf.size:
                return NEED_EXP
            st[ST_PENDING] = st[ST_T] + exp_buf[ptr[0]] / R
            ptr[0] += 1
        tn = st[ST_PENDING]
        if tn > t_stop:
            st[ST_T] = t_stop
            return DONE
        i = _fen_search(tree, uni_buf[ptr[1]] * total)
        ptr[1] += 1
        z = jump_buf[ptr[2]]
        ptr[2] += 1
        x[i] += z
        _add(st, z)
        nv = math.exp(-beta * (x[i] - ref))
        _fen_add(tree, i, nv - v[i])
        v[i] = nv
        st[ST_T] = tn
        st[ST_PENDING] = math.nan
        cnt[CNT_EVENTS] += 1
        cnt[CNT_PROPOSALS] += 1
        cnt[CNT_SINCE] += 1
        if log_on:
            _log(cnt, log_t, log_i, log_z, tn, i, z)
        if cnt[CNT_SINCE] >= recompute_every:
            diag[0] = max(diag[0], _recompute(x, st, cnt))
            cnt[CNT_SINCE] = 0  # forces a tree rebuild on the next event


@njit(cache=True)
def replay_positions(x0, idx, z):
    """Position of the jumper after each logged event (same float ops as the kernels)."""
    x = x0.copy()
    out = np.empty(idx.size)
    for e in range(idx.size):
        i = idx[e]
        x[i] += z[e]
        out[e] = x[i]
    return out


@njit(cache=True)
def residual_integral(x0, idx, z, times, g_init, g_new, kind, p, tx, ty, t_end):
    """Time integral of (1/n) sum_j g_j w(x_j - m) between events.

    Positions are piecewise constant, so the integral is a finite sum of
    rectangles. Returns the cumulative integral at each event time and at
    ``t_end`` (last entry).
    """
    n = x0.size
    x = x0.copy()
    g = g_init.copy()
    st = np.zeros(4)
    s, c = compensated_sum(x)
    st[ST_SHI] = s
    st[ST_SLO] = c
    E = idx.size
    out = np.empty(E + 1)
    acc = 0.0
    t_prev = 0.0
    for e in range(E + 1):
        t_next = times[e] if e < E else t_end
        m = (st[ST_SHI] + st[ST_SLO]) / n
        val = 0.0
        for j in range(n):
            val += g[j] * rate_value(kind, p, tx, ty, x[j] - m)
        acc += (t_next - t_prev) * val / n
        out[e] = acc
        t_prev = t_next
        if e < E:
            i = idx[e]
            x[i] += z[e]
            g[i] = g_new[e]
            _add(st, z[e])
    return out
