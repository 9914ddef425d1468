"""Independent reference computations used across the tests."""
import itertools

import numpy as np
from scipy import stats

from sosmix.coupling import CoupledPair, grand_step
from sosmix.dynamics import UpdateDraw
from sosmix.model import InvariantError, ModelParams, conditional_law


def brute_states(n, H, pinned=()):
    """All contours in [0, H]^n with zeros at the pinned (1-based) positions."""
    out = []
    for h in itertools.product(range(H + 1), repeat=n):
        if all(h[p - 1] == 0 for p in pinned):
            out.append(h)
    return np.array(out, dtype=np.int64)


def brute_weights(states, beta, bl=0, br=0):
    ext = np.hstack([np.full((len(states), 1), bl), states, np.full((len(states), 1), br)])
    return np.exp(-beta * np.abs(np.diff(ext, axis=1)).sum(axis=1))


# two-sided tail probability of a 4 sigma normal deviation
P_4SIGMA = 2 * stats.norm.sf(4.0)


def chi2_4sigma(counts, expected, min_expected=5.0):
    """Pearson chi-square with small cells pooled; passes unless its p-value is below the 4 sigma tail.

    Returns (statistic, threshold, passed).
    """
    counts = np.asarray(counts, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    small = expected < min_expected
    if small.any():
        counts = np.append(counts[~small], counts[small].sum())
        expected = np.append(expected[~small], expected[small].sum())
        if expected[-1] == 0:
            counts, expected = counts[:-1], expected[:-1]
    df = max(len(expected) - 1, 1)
    stat = float(((counts - expected) ** 2 / expected).sum())
    thr = float(stats.chi2.isf(P_4SIGMA, df))
    return stat, thr, stat <= thr


def direct_law(a, b, beta, H):
    """Conditional law by normalising the raw weights exp(-beta(|a-j| + |j-b|))."""
    j = np.arange(H + 1)
    w = np.exp(-beta * (np.abs(a - j) + np.abs(j - b)))
    return w / w.sum()


def draw_regions(kind: str, params: ModelParams) -> np.ndarray:
    """One uniform from every cell (and every boundary) of the partition the update rule induces."""
    if kind == "single_site":
        q = params.q
        cuts = {0.0, q / 4, 0.25, 0.5, 0.5 + q / 4, 0.75, 1.0}
    else:
        cuts = {0.0, 1.0}
        hs = np.arange(params.cap + 1)
        for a in hs:
            for b in hs[a:]:
                cuts.update(np.cumsum(conditional_law(int(a), int(b), params).pmf(hs)).tolist())
    c = np.array(sorted(x for x in cuts if 0 <= x <= 1))
    mids = (c[:-1] + c[1:]) / 2
    pts = np.array(sorted(set(mids.tolist()) | set(c.tolist())))
    return pts[pts < 1.0]


def exhaustive_order_violations(kind: str, params: ModelParams) -> int:
    """Apply every draw region at every position to every ordered pair; count order failures."""
    states = [np.array(s) for s in itertools.product(range(params.cap + 1), repeat=params.n)]
    bad = 0
    for lo in states:
        for hi in states:
            if np.any(lo > hi):
                continue
            pair = CoupledPair(lo, hi, params)
            for i in range(1, params.n + 1):
                for v in draw_regions(kind, params):
                    draw = UpdateDraw.from_uniform(i, v) if kind == "single_site" else UpdateDraw(i, r=v)
                    try:
                        grand_step(pair, draw, kind)
                    except InvariantError:
                        bad += 1
    return bad
