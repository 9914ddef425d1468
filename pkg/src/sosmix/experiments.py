"""Desk-scale scaling experiments: coalescence sweeps, relaxation, descent and the column walk.

All experiments draw their randomness from ``dynamics.stream(seed, k)``
with ``k`` the replica index, so results are reproducible from the
configuration and the master seed alone.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from sosmix import kernels
from sosmix.coupling import coalescence_time, default_t_max
from sosmix.dynamics import CHUNK, ChainKind, DrawStream, stream
from sosmix.model import ModelParams, ValidationError, conditional_law


def map_replicas(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, on a thread pool when ``threads > 1`` (kernels release the GIL)."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# log-log fits


@dataclass(frozen=True)
class Fit:
    slope: float
    intercept: float
    stderr: float
    excluded: tuple = ()

    def predict(self, x):
        return math.exp(self.intercept) * np.asarray(x, dtype=np.float64) ** self.slope


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, np.ndarray]:
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    k = x.shape[0]
    if k > 2:
        s2 = float(resid @ resid) / (k - 2)
        se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    else:
        se = math.nan
    return float(coef[0]), float(coef[1]), se, resid


def fit_loglog(xs, ys, *, drop_transient: bool = True) -> Fit:
    """Least-squares fit of ``log y = slope log x + intercept`` with the slope's standard error.

    With ``drop_transient`` and at least four points, the smallest ``x`` is
    dropped when it sits more than three standard errors of prediction away
    from the line fitted to the other points.
    """
    x_raw = np.asarray(xs, dtype=np.float64)
    x = np.log(x_raw)
    with np.errstate(divide="ignore"):
        y = np.log(np.asarray(ys, dtype=np.float64))
    if x.shape[0] < 2 or x.shape != y.shape:
        raise ValueError("need at least two (x, y) points of matching length")
    if not np.all(np.isfinite(y)):
        raise ValueError("fit values must be positive and finite")
    slope, icpt, se, _ = _ols(x, y)
    if drop_transient and x.shape[0] >= 4:
        k = int(np.argmin(x))
        keep = np.arange(x.shape[0]) != k
        s2, i2, se2, res2 = _ols(x[keep], y[keep])
        m = int(keep.sum())
        sigma = math.sqrt(float(res2 @ res2) / (m - 2))
        xr = x[keep]
        pred_se = sigma * math.sqrt(1 + 1 / m + (x[k] - xr.mean()) ** 2 / float(((xr - xr.mean()) ** 2).sum()))
        miss = abs(y[k] - (s2 * x[k] + i2))
        if miss > 3 * pred_se and miss > 1e-9:
            return Fit(s2, i2, se2, excluded=(float(x_raw[k]),))
    return Fit(slope, icpt, se)


# ---------------------------------------------------------------------------
# coalescence sweeps


@dataclass(frozen=True)
class ScalingPoint:
    n: int
    median: float
    dispersion: float   # interquartile range
    replicas: int
    timeouts: int


@dataclass
class ScalingResult:
    points: list
    fit: Fit | None
    partial: bool = False
    raw: dict = field(default_factory=dict)


def summarize(n: int, times: np.ndarray, timed_out: np.ndarray) -> ScalingPoint:
    """Median and IQR with timeouts entered at their (censored) budget value."""
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return ScalingPoint(n, float(med), float(q3 - q1), int(times.shape[0]), int(timed_out.sum()))


def _fit_points(points: list) -> tuple[Fit | None, bool]:
    good = [p for p in points if 2 * p.timeouts < p.replicas]
    partial = len(good) < len(points)
    if len(good) < 2:
        return None, True
    return fit_loglog([p.n for p in good], [p.median for p in good]), partial


def scaling_sweep(kind, n_list: Sequence[int], replicas: int, seed: int,
                  params_template: Callable[[int], ModelParams] | float, *,
                  t_max: Callable[[int], int] | None = None, threads: int = 1) -> ScalingResult:
    """Median coalescence time from (bottom, top) per n and the log-log fit.

    ``params_template`` maps n to parameters, or is a beta value for the
    default bounded model with cap n.  A point where at least half the
    replicas time out is reported but left out of the fit, and the result
    is flagged partial.
    """
    if list(n_list) != sorted(n_list):
        raise ValidationError("n_list must be ascending")
    if replicas < 1:
        raise ValidationError("need at least one replica")
    make = params_template if callable(params_template) else (lambda n: ModelParams(n, float(params_template)))
    kind = kind if isinstance(kind, ChainKind) else ChainKind.parse(kind)
    points, raw = [], {}
    for n in n_list:
        params = make(n)
        budget = default_t_max(kind, n) if t_max is None else t_max(n)
        res = map_replicas(lambda k: coalescence_time(kind, params, seed, budget, replica=k),
                           range(replicas), threads)
        times = np.array([r.steps for r in res], dtype=np.float64)
        touts = np.array([r.timed_out for r in res])
        raw[n] = res
        points.append(summarize(n, times, touts))
    fit, partial = _fit_points(points)
    return ScalingResult(points, fit, partial, raw)


# ---------------------------------------------------------------------------
# equilibrium bands and relaxation


STAT_CODES = {"mean_height": kernels.STAT_MEAN, "max_height": kernels.STAT_MAX}


def equilibrium_band(params: ModelParams, statistic: str = "mean_height", width: float = 2.0) -> tuple[float, float]:
    """Exact equilibrium mean +- ``width`` standard deviations of the statistic."""
    from sosmix.equilibrium import height_sum_moments, max_height_moments

    if statistic == "mean_height":
        m, v = height_sum_moments(params)
        m, sd = m / params.n, math.sqrt(v) / params.n
    elif statistic == "max_height":
        m, v = max_height_moments(params)
        sd = math.sqrt(v)
    else:
        raise ValueError(f"no exact band for statistic {statistic!r}")
    return m - width * sd, m + width * sd


@dataclass(frozen=True)
class RelaxationResult:
    start: str
    n: int
    replica: int
    steps: int
    timed_out: bool


def parse_start(text: str):
    """``top``, ``bottom``, ``conditioned:<h>`` or ``pinned:<m>``."""
    parts = text.split(":")
    if parts[0] in ("top", "bottom") and len(parts) == 1:
        return parts[0]
    if parts[0] in ("conditioned", "pinned") and len(parts) == 2:
        return parts[0], int(parts[1])
    raise ValueError(f"cannot parse start {text!r}")


def initial_contour(start, params: ModelParams, rng: np.random.Generator) -> np.ndarray:
    from sosmix.equilibrium import above, sample_exact

    if isinstance(start, str):
        start = parse_start(start)
    if start == "top":
        return params.top()
    if start == "bottom":
        return params.bottom()
    what, k = start
    if what == "conditioned":
        return sample_exact(params, above(k), rng=rng)
    return sample_exact(params.with_pins_every(k), None, rng=rng)


def relaxation_experiment(start, kind, statistic: str, band, params: ModelParams, seed: int, *,
                          replica: int = 0, dwell: int | None = None, budget: int | None = None) -> RelaxationResult:
    """First time the running statistic enters ``band`` and stays there for ``dwell`` steps.

    Conditioned and pinned starts are exact draws, consuming the head of
    the replica stream before the dynamics' draws.  The pinned start is
    only the initial law; the dynamics runs unpinned.
    """
    kind = kind if isinstance(kind, ChainKind) else ChainKind.parse(kind)
    if kind.name == "parallel":
        raise ValidationError("relaxation runs use single-site or column updates")
    lo, hi = band
    if lo > hi:
        raise ValidationError("band must satisfy lo <= hi")
    n = params.n
    dwell = n * n if dwell is None else int(dwell)
    budget = default_t_max("single_site", n) if budget is None else int(budget)
    rng = stream(seed, replica)
    h = params.validate(initial_contour(start, params, rng)).copy()
    label = start if isinstance(start, str) else f"{start[0]}:{start[1]}"
    stat = STAT_CODES[statistic]
    val = h.mean() if stat == kernels.STAT_MEAN else h.max()
    state = np.array([0, -1, int(h.sum()), int(h.max())], dtype=np.int64)
    if lo <= val <= hi:
        state[1] = 0
        if dwell == 0:
            return RelaxationResult(label, n, replica, 0, False)
    draws = DrawStream(n, rng)
    pinned = params.pin_mask()
    while state[0] < budget + dwell:
        pos, x = draws.take(min(CHUNK, budget + dwell - int(state[0])))
        hit = kernels.band_draws(h, kind.code, params.boundary_left, params.boundary_right, params.kernel_cap,
                                 params.q, pinned, pos, x, stat, float(lo), float(hi), dwell, state)
        if hit >= 0:
            if hit <= budget:
                return RelaxationResult(label, n, replica, int(hit), False)
            break
    return RelaxationResult(label, n, replica, budget, True)


def relaxation_sweep(start_for_n: Callable[[int], object], kind, n_list, replicas: int, seed: int, beta: float, *,
                     statistic: str = "mean_height", threads: int = 1) -> ScalingResult:
    """Median band-hitting times over n and their log-log fit."""
    points, raw = [], {}
    for n in n_list:
        params = ModelParams(n, beta)
        band = equilibrium_band(params, statistic)
        start = start_for_n(n)
        res = map_replicas(lambda k: relaxation_experiment(start, kind, statistic, band, params, seed, replica=k),
                           range(replicas), threads)
        raw[n] = res
        points.append(summarize(n, np.array([r.steps for r in res], dtype=np.float64),
                                np.array([r.timed_out for r in res])))
    fit, partial = _fit_points(points)
    return ScalingResult(points, fit, partial, raw)


# ---------------------------------------------------------------------------
# staged descent from the top


@dataclass
class DescentProfile:
    n: int
    levels: list          # n - k sqrt(n), k = 1, 2, ...
    stage_times: list     # first time max height <= level (None if not reached)
    band_time: int | None
    series: list          # (t, max height, mean height) every ``stride`` steps


def descent_profile(params: ModelParams, seed: int, *, kind="single_site", replica: int = 0,
                    budget: int | None = None, stride: int | None = None) -> DescentProfile:
    """Run from the top contour, recording level-crossing times of the max height.

    Levels are ``n - k sqrt(n)`` down to 0; ``band_time`` is the first entry
    of the mean height into its exact equilibrium band (no dwell).
    """
    if params.cap is None:
        raise ValidationError("descent starts from the top contour; needs bounded heights")
    kind = kind if isinstance(kind, ChainKind) else ChainKind.parse(kind)
    n = params.n
    budget = default_t_max("single_site", n) if budget is None else int(budget)
    stride = n * n if stride is None else int(stride)
    root = math.sqrt(n)
    levels = []
    k = 1
    while params.cap - k * root >= 0:
        levels.append(params.cap - k * root)
        k += 1
    lo, hi = equilibrium_band(params, "mean_height")
    h = params.top()
    draws = DrawStream(n, stream(seed, replica))
    pinned = params.pin_mask()
    args = (kind.code, params.boundary_left, params.boundary_right, params.kernel_cap, params.q, pinned)
    stage_times: list = [None] * len(levels)
    li = 0
    band_time = None
    series = [(0, int(h.max()), float(h.mean()))]
    t = 0
    while t < budget:
        pos, x = draws.take(min(stride, budget - t))
        lstate = np.array([t, int(h.max())], dtype=np.int64)
        off = 0
        # level crossings inside this block, then the band check at block end
        while li < len(levels) and off < pos.shape[0]:
            hit = kernels.level_draws(h, *args, pos[off:], x[off:], int(math.floor(levels[li])), lstate)
            off = int(lstate[0]) - t
            if hit < 0:
                break
            stage_times[li] = int(hit)
            li += 1
        if off < pos.shape[0]:
            kernels.run_draws(h, *args, pos[off:], x[off:])
        t += pos.shape[0]
        series.append((t, int(h.max()), float(h.mean())))
        if band_time is None and lo <= h.mean() <= hi:
            band_time = t
        if band_time is not None and li == len(levels):
            break
    return DescentProfile(n, levels, stage_times, band_time, series)


# ---------------------------------------------------------------------------
# single-column walk


@dataclass(frozen=True)
class ColumnWalkResult:
    a: int
    b: int
    ell: int
    steps: int
    tv: float
    timed_out: bool


def column_walk_check(a: int, b: int, ell: int, params: ModelParams, seed: int, *,
                      replicas: int = 20000, max_steps: int = 10 ** 6, threshold: float = 0.25) -> ColumnWalkResult:
    """Single-site updates of one column with frozen neighbours ``a <= b``, started at ``b + ell``.

    Returns the first step count at which the empirical law of ``replicas``
    independent walks is within total variation ``threshold`` of the exact
    conditional law.
    """
    if a > b or a < 0 or ell < 0:
        raise ValidationError("need 0 <= a <= b and ell >= 0")
    law = conditional_law(a, b, params)
    top = law.support_max(1e-12)
    start = b + ell
    if params.cap is not None and start > params.cap:
        raise ValidationError("start height exceeds the cap")
    support = max(top, start) + 1
    pmf = np.zeros(support + 1)
    pmf[:top + 1] = law.pmf(np.arange(top + 1))
    rng = stream(seed)
    h = np.full(replicas, start, dtype=np.int64)
    cap, q = params.kernel_cap, params.q

    def tv():
        hist = np.bincount(np.minimum(h, support), minlength=support + 1) / replicas
        return 0.5 * float(np.abs(hist - pmf).sum())

    d = tv()
    if d < threshold:
        return ColumnWalkResult(a, b, ell, 0, d, False)
    for s in range(1, max_steps + 1):
        h = kernels.ss_move_vec(h, a, b, cap, q, rng.random(replicas))
        d = tv()
        if d < threshold:
            return ColumnWalkResult(a, b, ell, s, d, False)
    return ColumnWalkResult(a, b, ell, max_steps, d, True)


# ---------------------------------------------------------------------------
# sandwich consistency under shared draws


@dataclass
class SandwichReport:
    times: np.ndarray
    bottom: np.ndarray
    middle: np.ndarray
    top: np.ndarray
    violations: int


def sandwich_check(params: ModelParams, kind, seed: int, steps: int, *, statistic: str = "mean_height",
                   stride: int | None = None, middle=None) -> SandwichReport:
    """Run bottom, equilibrium (or ``middle``) and top starts on the same draws.

    Counts recorded times at which the pointwise order bottom <= middle <=
    top fails; the recorded statistics are monotone so they inherit it.
    """
    from sosmix.coupling import _par_pair
    from sosmix.dynamics import STATISTICS
    from sosmix.equilibrium import sample_exact

    kind = kind if isinstance(kind, ChainKind) else ChainKind.parse(kind)
    params = kind.params_for(params)
    rng = stream(seed)
    mid = sample_exact(params, None, rng=rng) if middle is None else params.validate(middle).copy()
    chains = [params.bottom(), mid, params.top()]
    stride = params.n ** 2 if stride is None else int(stride)
    stat = STATISTICS[statistic]
    draws = DrawStream(params.n, rng)
    pinned = params.pin_mask()
    rows, viol = [], 0
    t = 0
    while True:
        rows.append((t, *[stat(c, params, None, None) for c in chains]))
        if np.any(chains[0] > chains[1]) or np.any(chains[1] > chains[2]):
            viol += 1
        if t >= steps:
            break
        m = min(stride, steps - t)
        if kind.name == "parallel":
            for _ in range(m):
                r = draws.take_uniforms(2 * params.n)
                chains = [_par_pair(c, kind.order, r, params) for c in chains]
        else:
            pos, x = draws.take(m)
            for c in chains:
                kernels.run_draws(c, kind.code, params.boundary_left, params.boundary_right,
                                  params.kernel_cap, params.q, pinned, pos, x)
        t += m
    arr = np.array(rows)
    return SandwichReport(arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2], arr[:, 3], viol)
