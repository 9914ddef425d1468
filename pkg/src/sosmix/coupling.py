"""Grand coupling of two contours, top/bottom coalescence and the exact Wilson drift."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from sosmix import kernels
from sosmix.dynamics import (
    CHUNK,
    ChainKind,
    DrawStream,
    col_step,
    par_sweep,
    ss_step,
    stream,
)
from sosmix.model import InvariantError, ModelParams, ValidationError, conditional_mean_direct
from sosmix.wilson import WilsonWeights, weights


@dataclass
class CoupledPair:
    """Two contours driven by the same draws, ``lower <= upper`` pointwise."""

    lower: np.ndarray
    upper: np.ndarray
    params: ModelParams

    def __post_init__(self):
        self.lower = self.params.validate(self.lower).copy()
        self.upper = self.params.validate(self.upper).copy()
        self.check()

    @classmethod
    def extremes(cls, params: ModelParams) -> "CoupledPair":
        return cls(params.bottom(), params.top(), params)

    def check(self):
        if np.any(self.lower > self.upper):
            bad = np.flatnonzero(self.lower > self.upper) + 1
            raise InvariantError(f"coupled pair out of order at positions {bad.tolist()}")

    @property
    def coalesced(self) -> bool:
        return bool(np.array_equal(self.lower, self.upper))

    def distance(self, ww: WilsonWeights | None = None) -> float:
        ww = weights(self.params.n) if ww is None else ww
        return float(np.dot(ww.w, self.upper - self.lower))


def _kind(kind) -> ChainKind:
    return kind if isinstance(kind, ChainKind) else ChainKind.parse(str(kind))


def grand_step(pair: CoupledPair, draw, kind) -> CoupledPair:
    """Apply one draw to both copies; raises ``InvariantError`` if the order breaks.

    ``draw`` is an ``UpdateDraw`` for single-site/column kinds and an array
    of ``2n`` uniforms (one per position per sweep) for the parallel kind.
    """
    kind = _kind(kind)
    p = pair.params
    if kind.name == "parallel":
        r = np.asarray(draw, dtype=np.float64)
        if r.shape != (2 * p.n,):
            raise ValueError(f"parallel step needs {2 * p.n} uniforms")
        lo = _par_pair(pair.lower, kind.order, r, p)
        hi = _par_pair(pair.upper, kind.order, r, p)
    else:
        step = ss_step if kind.name == "single_site" else col_step
        lo = step(pair.lower, draw, p)
        hi = step(pair.upper, draw, p)
    out = CoupledPair.__new__(CoupledPair)
    out.lower, out.upper, out.params = lo, hi, p
    out.check()
    return out


@dataclass(frozen=True)
class CoalescenceResult:
    kind: str
    n: int
    beta: float
    seed: int
    replica: int
    steps: int
    timed_out: bool


def default_t_max(kind, n: int) -> int:
    """64 n^3 ln n (column), 64 n^3.5 ln n (single-site), 64 n^2 ln n sweep pairs (parallel)."""
    name = _kind(kind).name
    L = max(math.log(n), 1.0)
    expo = {"column": 3.0, "single_site": 3.5, "parallel": 2.0}[name]
    return int(math.ceil(64 * n ** expo * L))


def coalescence_time(kind, params: ModelParams, seed: int, t_max: int | None = None, *,
                     replica: int = 0, lower=None, upper=None) -> CoalescenceResult:
    """First step at which the coupled chains from bottom and top agree.

    A timeout is reported as ``timed_out=True`` with ``steps = t_max``.
    Disagreements are counted incrementally in the compiled loop, so each
    step costs O(1) beyond the update itself.
    """
    kind = _kind(kind)
    params = kind.params_for(params)
    t_max = default_t_max(kind, params.n) if t_max is None else int(t_max)
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    lo = params.bottom() if lower is None else params.validate(lower).copy()
    hi = params.top() if upper is None else params.validate(upper).copy()
    if np.any(lo > hi):
        raise ValidationError("starting pair is not ordered")
    rng = stream(seed, replica)

    def result(steps, timed_out):
        return CoalescenceResult(str(kind), params.n, params.beta, seed, replica, int(steps), timed_out)

    ndiff = int(np.count_nonzero(lo != hi))
    if ndiff == 0:
        return result(0, False)
    if kind.name == "parallel":
        for t in range(1, t_max + 1):
            r = rng.random(2 * params.n)
            lo = _par_pair(lo, kind.order, r, params)
            hi = _par_pair(hi, kind.order, r, params)
            if np.any(lo > hi):
                raise InvariantError(f"parallel coupling out of order at step {t}")
            if np.array_equal(lo, hi):
                return result(t, False)
        return result(t_max, True)
    draws = DrawStream(params.n, rng)
    pinned = params.pin_mask()
    nd = np.array([ndiff], dtype=np.int64)
    done = 0
    while done < t_max:
        m = min(CHUNK, t_max - done)
        pos, x = draws.take(m)
        used, status = kernels.coupled_draws(lo, hi, kind.code, params.boundary_left, params.boundary_right,
                                             params.kernel_cap, params.q, pinned, pos, x, nd)
        done += used
        if status == kernels.ORDER_VIOLATION:
            raise InvariantError(f"coupling out of order at step {done}")
        if status == kernels.COALESCED:
            return result(done, False)
    return result(t_max, True)


def _par_pair(h: np.ndarray, order: str, r: np.ndarray, params: ModelParams) -> np.ndarray:
    """One OE/EO step driven by ``2n`` uniforms (first half for the first sweep)."""
    first, second = ("odd", "even") if order == "OE" else ("even", "odd")
    n = params.n
    return par_sweep(par_sweep(h, first, r[:n], params, validate=False), second, r[n:], params, validate=False)


def write_coalescence_csv(results, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["kind", "n", "beta", "seed", "steps", "timed_out"])
    for r in results:
        writer.writerow([r.kind, r.n, repr(r.beta), r.seed if r.replica == 0 else f"{r.seed}:{r.replica}",
                         r.steps, int(r.timed_out)])


# ---------------------------------------------------------------------------
# exact drift of the Wilson distance


class MeanTable:
    """Direct-summation conditional means for all sorted neighbour pairs, cached per params."""

    def __init__(self, params: ModelParams, top: int | None = None):
        if params.cap is None and top is None:
            raise ValidationError("unbounded mode needs an explicit table size")
        H = params.cap if params.cap is not None else int(top)
        self.params = params
        self.table = np.zeros((H + 1, H + 1))
        for a in range(H + 1):
            for b in range(a, H + 1):
                self.table[a, b] = self.table[b, a] = conditional_mean_direct(a, b, params)

    def __call__(self, a, b):
        return self.table[a, b]


def _column_means(h: np.ndarray, params: ModelParams, means: MeanTable) -> np.ndarray:
    ext = np.concatenate(([params.boundary_left], h, [params.boundary_right]))
    m = means(ext[:-2], ext[2:])
    return np.where(params.pin_mask(), 0.0, m)


def exact_pair_drift(pair: CoupledPair, ww: WilsonWeights | None = None, *,
                     means: MeanTable | None = None) -> float:
    """``E[D(t+1) - D(t) | pair]`` under one column step, summed over the n update positions."""
    p = pair.params
    pair.check()
    ww = weights(p.n) if ww is None else ww
    means = MeanTable(p, top=int(pair.upper.max()) + 64) if means is None else means
    mu_hi = _column_means(pair.upper, p, means)
    mu_lo = _column_means(pair.lower, p, means)
    live = ~p.pin_mask()
    change = (mu_hi - pair.upper) - (mu_lo - pair.lower)
    return float(np.dot(ww.w, change * live)) / p.n


def drift_bound(pair: CoupledPair, ww: WilsonWeights | None = None) -> float:
    """The contraction target ``-(lambda/n) D``."""
    ww = weights(pair.params.n) if ww is None else ww
    return -ww.lam / pair.params.n * pair.distance(ww)
