"""Compiled inner loops shared by the dynamics, coupling and experiments.

Conventions: heights are int64 arrays indexed 0..n-1 (position i is index
i-1); ``cap < 0`` means unbounded heights; ``q = exp(-2 beta)``.  Kinds:
``SINGLE_SITE = 0``, ``COLUMN = 1``.  A single-site draw is one uniform
``v``: ``v < 1/2`` proposes a down move with acceptance variable ``u = 2v``,
otherwise an up move with ``u = 2v - 1``.  A column draw is the inverse-CDF
uniform ``r``.
"""
import math

import numpy as np
from numba import njit

SINGLE_SITE = 0
COLUMN = 1

# status codes returned by the coupled loops
RUNNING = 0
COALESCED = 1
ORDER_VIOLATION = -1

STAT_MEAN = 0
STAT_MAX = 1


@njit(cache=True)
def _tail(m, q, one_minus_q):
    if m <= 0:
        return 0.0
    return q * (1.0 - q ** m) / one_minus_q


@njit(cache=True)
def cum_weight(j, a, b, cap, q):
    """Cumulative unnormalised mass of heights 0..j (unit weight on [a, b])."""
    omq = 1.0 - q
    if j < a:
        return (q ** (a - j) - q ** (a + 1)) / omq
    s_a = _tail(a, q, omq)
    if j <= b:
        return s_a + (j - a + 1)
    return s_a + (b - a + 1) + _tail(j - b, q, omq)


@njit(cache=True)
def col_sample(a, b, cap, q, r):
    """Least height j with cumulative mass >= r * total."""
    omq = 1.0 - q
    s_a = _tail(a, q, omq)
    mid = b - a + 1
    if cap < 0:
        s_hi = q / omq
    else:
        s_hi = _tail(cap - b, q, omq)
    x = r * (s_a + mid + s_hi)
    lq = math.log(q)
    if a > 0 and x <= s_a:
        y = x * omq + q ** (a + 1)
        j = int(math.ceil(a - math.log(y) / lq))
        if j < 0:
            j = 0
        if j > a - 1:
            j = a - 1
    elif x <= s_a + mid:
        j = a + int(math.ceil(x - s_a)) - 1
        if j < a:
            j = a
        if j > b:
            j = b
    else:
        m = x - s_a - mid
        z = 1.0 - m * omq / q
        if z < 1e-300:
            z = 1e-300
        k = int(math.ceil(math.log(z) / lq))
        if k < 1:
            k = 1
        if cap >= 0 and k > cap - b:
            k = cap - b
        j = b + k
    # exact fix-up against the cumulative function
    while j > 0 and cum_weight(j - 1, a, b, cap, q) >= x:
        j -= 1
    while cum_weight(j, a, b, cap, q) < x and (cap < 0 or j < cap):
        j += 1
    return j


@njit(cache=True)
def ss_move(h, a, b, cap, q, v):
    """New height of one column under a single-site draw ``v``."""
    if v < 0.5:
        u = 2.0 * v
        thr = 0.5 if h > a else 0.5 * q
        if u < thr and h > 0:
            return h - 1
        return h
    u = 2.0 * v - 1.0
    thr = 0.5 if h < b else 0.5 * q
    if u < thr and (cap < 0 or h < cap):
        return h + 1
    return h


@njit(cache=True)
def _neighbours(h, i, bl, br):
    n = h.shape[0]
    left = h[i - 1] if i > 0 else bl
    right = h[i + 1] if i < n - 1 else br
    if left <= right:
        return left, right
    return right, left


@njit(cache=True)
def new_height(h, i, x, kind, bl, br, cap, q):
    a, b = _neighbours(h, i, bl, br)
    if kind == SINGLE_SITE:
        return ss_move(h[i], a, b, cap, q, x)
    return col_sample(a, b, cap, q, x)


@njit(cache=True, nogil=True)
def run_draws(h, kind, bl, br, cap, q, pinned, pos, x):
    """Apply the draws (pos[k], x[k]) in order, in place."""
    for k in range(pos.shape[0]):
        i = pos[k]
        if pinned[i]:
            continue
        h[i] = new_height(h, i, x[k], kind, bl, br, cap, q)


@njit(cache=True, nogil=True)
def run_draws_censored(h, kind, bl, br, cap, q, pinned, pos, x, keep_parity, grad_thr, log_b):
    """Like run_draws but skip positions whose 1-based parity differs from ``keep_parity``.

    ``keep_parity``: 1 keeps odd positions, 0 keeps even, -1 keeps all, -2
    keeps none.  ``log_b[k]`` records whether the contour after draw k lies in
    the gradient event (some boundary-inclusive increment >= grad_thr).
    Returns the number of applied updates.
    """
    n = h.shape[0]
    applied = 0
    for k in range(pos.shape[0]):
        i = pos[k]
        keep = keep_parity == -1 or (keep_parity >= 0 and ((i + 1) % 2) == keep_parity)
        if keep and not pinned[i]:
            h[i] = new_height(h, i, x[k], kind, bl, br, cap, q)
            applied += 1
        big = False
        prev = bl
        for j in range(n + 1):
            cur = h[j] if j < n else br
            if abs(cur - prev) >= grad_thr:
                big = True
                break
            prev = cur
        log_b[k] = big
    return applied


@njit(cache=True, nogil=True)
def coupled_draws(lo, hi, kind, bl, br, cap, q, pinned, pos, x, ndiff):
    """Grand coupling: apply each draw to both copies until they coalesce.

    ``ndiff[0]`` carries the number of disagreeing sites between calls.
    Returns (draws consumed, status).
    """
    for k in range(pos.shape[0]):
        i = pos[k]
        if pinned[i]:
            continue
        was = lo[i] != hi[i]
        lo[i] = new_height(lo, i, x[k], kind, bl, br, cap, q)
        hi[i] = new_height(hi, i, x[k], kind, bl, br, cap, q)
        if lo[i] > hi[i]:
            return k + 1, ORDER_VIOLATION
        now = lo[i] != hi[i]
        if was and not now:
            ndiff[0] -= 1
        elif now and not was:
            ndiff[0] += 1
        if ndiff[0] == 0:
            return k + 1, COALESCED
    return pos.shape[0], RUNNING


@njit(cache=True)
def _rescan_max(h):
    m = h[0]
    for j in range(1, h.shape[0]):
        if h[j] > m:
            m = h[j]
    return m


@njit(cache=True, nogil=True)
def band_draws(h, kind, bl, br, cap, q, pinned, pos, x, stat, lo, hi, dwell, state):
    """Advance the chain and watch a statistic for entry into [lo, hi] with dwell.

    ``state = [t, enter, total, curmax]`` persists across calls: ``t`` steps
    done, ``enter`` the time of the latest entry into the band (-1 when
    outside), ``total`` the height sum, ``curmax`` the max height.  Returns
    the hitting time (entry time of the first stay lasting ``dwell`` steps)
    or -1 if not yet reached.
    """
    n = h.shape[0]
    t = int(state[0])
    enter = int(state[1])
    total = int(state[2])
    curmax = int(state[3])
    result = -1
    for k in range(pos.shape[0]):
        i = pos[k]
        if not pinned[i]:
            old = h[i]
            new = new_height(h, i, x[k], kind, bl, br, cap, q)
            h[i] = new
            total += new - old
            if new > curmax:
                curmax = new
            elif old == curmax and new < old:
                curmax = _rescan_max(h)
        t += 1
        val = total / n if stat == STAT_MEAN else float(curmax)
        if lo <= val <= hi:
            if enter < 0:
                enter = t
            if t - enter >= dwell:
                result = enter
                break
        else:
            enter = -1
    state[0] = t
    state[1] = enter
    state[2] = total
    state[3] = curmax
    return result


@njit(cache=True, nogil=True)
def level_draws(h, kind, bl, br, cap, q, pinned, pos, x, level, state):
    """Advance until max height <= level; ``state = [t, curmax]``.  Returns hit time or -1."""
    t = int(state[0])
    curmax = int(state[1])
    result = -1
    for k in range(pos.shape[0]):
        i = pos[k]
        if not pinned[i]:
            old = h[i]
            new = new_height(h, i, x[k], kind, bl, br, cap, q)
            h[i] = new
            if new > curmax:
                curmax = new
            elif old == curmax and new < old:
                curmax = _rescan_max(h)
        t += 1
        if curmax <= level:
            result = t
            break
    state[0] = t
    state[1] = curmax
    return result


@njit(cache=True)
def ss_move_vec(h, a, b, cap, q, v):
    """One single-site draw for each of many independent copies of a column."""
    out = np.empty(h.shape[0], dtype=np.int64)
    for k in range(h.shape[0]):
        out[k] = ss_move(h[k], a, b, cap, q, v[k])
    return out


@njit(cache=True)
def col_sample_vec(a, b, cap, q, r):
    out = np.empty(a.shape[0], dtype=np.int64)
    for k in range(a.shape[0]):
        out[k] = col_sample(a[k], b[k], cap, q, r[k])
    return out
