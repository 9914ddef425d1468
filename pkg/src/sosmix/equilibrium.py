"""Transfer-matrix computations for the SOS Gibbs measure.

Forward sums ``Z_i(h)`` (total weight of partial contours ``eta(1..i)``
ending at height ``h``) are built position by position with the kernel
``exp(-beta |h - h'|)``.  Each forward vector is rescaled by its maximum and
the scale is accumulated in log space, so nothing underflows for long
chains.  The kernel product is done in O(H) with left/right geometric
recursions (O(H g) under a gradient cap ``g``).

Unbounded heights are handled by truncating at
``H* = n + ceil((20/beta) ln n)``; every table carries a rigorous upper
bound on the probability mass lost by the truncation.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numba import njit

from sosmix.model import ModelParams, ValidationError

log = logging.getLogger(__name__)


class EmptyStateSpace(ValidationError):
    pass


# ---------------------------------------------------------------------------
# kernel products


@njit(cache=True)
def _left_right(v, beta):
    """L(x) = sum_{h<=x} e^{-beta(x-h)} v(h) and R(x) = sum_{h>=x} e^{-beta(h-x)} v(h)."""
    m = v.shape[0]
    c = math.exp(-beta)
    L = np.empty(m)
    R = np.empty(m)
    acc = 0.0
    for x in range(m):
        acc = c * acc + v[x]
        L[x] = acc
    acc = 0.0
    for x in range(m - 1, -1, -1):
        acc = c * acc + v[x]
        R[x] = acc
    return L, R


@njit(cache=True)
def _apply_full(v, beta):
    L, R = _left_right(v, beta)
    c = math.exp(-beta)
    m = v.shape[0]
    out = np.empty(m)
    for x in range(m):
        out[x] = L[x] + (c * R[x + 1] if x + 1 < m else 0.0)
    return out


@njit(cache=True)
def _apply_small(v, beta, g):
    """Kernel restricted to |h - h'| < g."""
    m = v.shape[0]
    out = np.zeros(m)
    w = np.empty(g)
    for k in range(g):
        w[k] = math.exp(-beta * k)
    for x in range(m):
        s = 0.0
        lo = max(0, x - g + 1)
        hi = min(m - 1, x + g - 1)
        for h in range(lo, hi + 1):
            s += w[abs(h - x)] * v[h]
        out[x] = s
    return out


@njit(cache=True)
def _apply_big(v, beta, d):
    """Kernel restricted to |h - h'| >= d (d >= 1), without subtraction."""
    L, R = _left_right(v, beta)
    m = v.shape[0]
    c = math.exp(-beta * d)
    out = np.zeros(m)
    for x in range(m):
        s = 0.0
        if x - d >= 0:
            s += L[x - d]
        if x + d < m:
            s += R[x + d]
        out[x] = c * s
    return out


def _apply(v: np.ndarray, beta: float, g: int | None) -> np.ndarray:
    if g is None or g >= v.shape[0]:
        return _apply_full(v, beta)
    return _apply_small(v, beta, g)


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        return -math.inf
    return float(m + math.log(np.sum(np.exp(x - m))))


def _boundary_log_weights(heights: np.ndarray, bh: int, beta: float, g: int | None) -> np.ndarray:
    lw = -beta * np.abs(heights - bh).astype(np.float64)
    if g is not None:
        lw[np.abs(heights - bh) >= g] = -math.inf
    return lw


# ---------------------------------------------------------------------------
# restrictions and tables


@dataclass(frozen=True)
class Restriction:
    """Constraints on the contours counted by a table.

    ``min_height``/``max_height`` are scalars or per-position sequences;
    ``gradient_cap = g`` keeps only contours with every boundary-inclusive
    increment ``|eta(i+1) - eta(i)| < g``; ``pin_spacing = m`` pins
    positions m, 2m, ... to zero (on top of ``params.pinned``).
    """

    min_height: Union[int, Sequence[int]] = 0
    max_height: Union[int, Sequence[int], None] = None
    gradient_cap: int | None = None
    pin_spacing: int | None = None


Conditioning = Restriction


def above(h: int) -> Restriction:
    """The event A_h = {eta(i) >= h for all i}."""
    return Restriction(min_height=int(h))


def pinned_every(m: int) -> Restriction:
    return Restriction(pin_spacing=int(m))


def truncation_height(params: ModelParams) -> int:
    n = params.n
    top = n + math.ceil((20.0 / params.beta) * math.log(max(n, 2)))
    return max(top, params.boundary_left, params.boundary_right)


def truncation_tail_bound(params: ModelParams, top: int, log_z_trunc: float) -> float:
    """Upper bound on the unbounded-model probability that some height exceeds ``top``.

    Dropping positivity, the weight of contours with ``eta(i) >= M`` is at
    most ``n phi^{n+1} e^{-lam(2M - l - r)} / (1 - e^{-2 lam})`` for any
    ``0 < lam < beta``, where ``phi(lam) = sum_z e^{-beta|z| + lam z}``;
    divide by the truncated partition function (a lower bound for the full
    one).  Minimised over a grid of ``lam``.
    """
    beta = params.beta
    n = params.n
    M = top + 1
    best = math.inf
    for lam in np.linspace(0.02, 0.98, 49) * beta:
        a = math.exp(-(beta - lam))
        b = math.exp(-(beta + lam))
        phi = 1.0 + a / (1.0 - a) + b / (1.0 - b)
        lb = (math.log(n) + (n + 1) * math.log(phi)
              - lam * (2 * M - params.boundary_left - params.boundary_right)
              - math.log(-math.expm1(-2.0 * lam)))
        best = min(best, lb)
    return min(1.0, math.exp(best - log_z_trunc))


@dataclass
class TransferTables:
    """Forward sums of a (restricted) SOS measure.

    ``log_forward[i, h]`` is the log of ``Z_{i+1}(h)``: the weight of partial
    contours on positions 1..i+1 with last height h, including the left
    boundary increment.  ``log_z`` adds the right boundary increment.
    """

    params: ModelParams
    restriction: Restriction
    top: int
    allowed: np.ndarray
    log_forward: np.ndarray
    log_z: float
    truncation_error: float = 0.0

    @property
    def heights(self) -> np.ndarray:
        return np.arange(self.top + 1)

    @property
    def total_weight(self) -> float:
        return math.exp(self.log_z)


def _per_position(value, n: int, default: int) -> np.ndarray:
    if value is None:
        return np.full(n, default, dtype=np.int64)
    arr = np.asarray(value, dtype=np.int64)
    if arr.ndim == 0:
        return np.full(n, int(arr), dtype=np.int64)
    if arr.shape != (n,):
        raise ValidationError(f"per-position bound needs {n} entries")
    return arr


def _allowed(params: ModelParams, restriction: Restriction, top: int) -> np.ndarray:
    n = params.n
    lo = _per_position(restriction.min_height, n, 0)
    hi = _per_position(restriction.max_height, n, top)
    hs = np.arange(top + 1)
    allowed = (hs[None, :] >= lo[:, None]) & (hs[None, :] <= hi[:, None])
    pins = set(params.pinned)
    if restriction.pin_spacing is not None:
        pins |= set(range(restriction.pin_spacing, n + 1, restriction.pin_spacing))
    for p in pins:
        allowed[p - 1, 1:] = False
    return allowed


def _height_top(params: ModelParams, truncation: int | None) -> int:
    if params.cap is not None:
        return params.cap
    return truncation_height(params) if truncation is None else int(truncation)


def build_tables(params: ModelParams, restriction: Restriction | None = None, *,
                 truncation: int | None = None) -> TransferTables:
    """Forward transfer tables for ``params`` under ``restriction``.

    Raises ``EmptyStateSpace`` when no contour satisfies the restriction.
    """
    restriction = Restriction() if restriction is None else restriction
    top = _height_top(params, truncation)
    g = restriction.gradient_cap
    if g is not None and g < 1:
        raise ValidationError("gradient cap must be >= 1")
    allowed = _allowed(params, restriction, top)
    hs = np.arange(top + 1)
    beta = params.beta
    n = params.n
    logf = np.full((n, top + 1), -math.inf)
    lw = _boundary_log_weights(hs, params.boundary_left, beta, g)
    lw[~allowed[0]] = -math.inf
    scale = np.max(lw)
    if not np.isfinite(scale):
        raise EmptyStateSpace("no allowed height at position 1")
    v = np.exp(lw - scale)
    with np.errstate(divide="ignore"):
        logf[0] = np.log(v) + scale
        for i in range(1, n):
            v = _apply(v, beta, g) * allowed[i]
            c = v.max()
            if c <= 0:
                raise EmptyStateSpace(f"no allowed partial contour reaches position {i + 1}")
            v = v / c
            scale += math.log(c)
            logf[i] = np.log(v) + scale
    lz = _logsumexp(logf[-1] + _boundary_log_weights(hs, params.boundary_right, beta, g))
    if not np.isfinite(lz):
        raise EmptyStateSpace("no allowed contour meets the right boundary")
    err = 0.0
    if params.cap is None:
        err = truncation_tail_bound(params, top, lz)
        log.info("unbounded truncation at H*=%d: tail mass <= %.3e", top, err)
    return TransferTables(params=params, restriction=restriction, top=top, allowed=allowed,
                          log_forward=logf, log_z=lz, truncation_error=err)


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class AtLeast:
    """A_h: every height >= h."""
    h: int


@dataclass(frozen=True)
class Gradient:
    """B_d: some boundary-inclusive increment |eta(i+1) - eta(i)| >= d."""
    d: int


@dataclass(frozen=True)
class Exceed:
    """Complement of C: some height > level (default level n)."""
    level: int | None = None


@dataclass(frozen=True)
class Marginal:
    """eta(i) = h at 1-based position i."""
    i: int
    h: int


@dataclass(frozen=True)
class Tail:
    """eta(i) >= h at 1-based position i."""
    i: int
    h: int


Event = Union[AtLeast, Gradient, Exceed, Marginal, Tail]


def _flagged_log_weight(params: ModelParams, top: int, base_allowed: np.ndarray, kind: str, thr: int) -> float:
    """Log weight of contours that hit a 'bad' transition, by a two-layer forward pass.

    kind 'gradient': bad = some increment >= thr.  kind 'exceed': bad = some
    height > thr.  No complements are taken, so tiny probabilities keep full
    relative precision.
    """
    beta = params.beta
    n = params.n
    hs = np.arange(top + 1)
    lw = _boundary_log_weights(hs, params.boundary_left, beta, None)
    lw[~base_allowed[0]] = -math.inf
    scale = np.max(lw)
    w0 = np.exp(lw - scale)
    if kind == "gradient":
        bad0 = np.abs(hs - params.boundary_left) >= thr
    else:
        bad0 = hs > thr
    v1 = np.where(bad0, w0, 0.0)
    v0 = np.where(bad0, 0.0, w0)
    for i in range(1, n):
        if kind == "gradient":
            n0 = _apply(v0, beta, thr)
            n1 = _apply_full(v1, beta) + _apply_big(v0, beta, thr)
        else:
            k0 = _apply_full(v0, beta)
            over = hs > thr
            n0 = np.where(over, 0.0, k0)
            n1 = _apply_full(v1, beta) + np.where(over, k0, 0.0)
        n0 = n0 * base_allowed[i]
        n1 = n1 * base_allowed[i]
        c = max(n0.max(), n1.max())
        if c <= 0:
            return -math.inf
        v0, v1 = n0 / c, n1 / c
        scale += math.log(c)
    rb = np.abs(hs - params.boundary_right)
    wr = np.exp(-beta * rb.astype(np.float64))
    if kind == "gradient":
        total = np.dot(v1, wr) + np.dot(v0, np.where(rb >= thr, wr, 0.0))
    else:
        total = np.dot(v1, wr)
    if total <= 0:
        return -math.inf
    return scale + math.log(total)


def log_event_prob(event: Event, params: ModelParams, *, truncation: int | None = None) -> float:
    """Natural log of the exact Gibbs probability of ``event`` (-inf if impossible)."""
    base = build_tables(params, truncation=truncation)
    top = base.top
    n = params.n
    if isinstance(event, Gradient):
        if event.d < 1:
            return 0.0
        return _flagged_log_weight(params, top, base.allowed, "gradient", int(event.d)) - base.log_z
    if isinstance(event, Exceed):
        level = n if event.level is None else int(event.level)
        if level >= top:
            return -math.inf
        return _flagged_log_weight(params, top, base.allowed, "exceed", level) - base.log_z
    if isinstance(event, AtLeast):
        r = Restriction(min_height=int(event.h))
    elif isinstance(event, (Marginal, Tail)):
        if not 1 <= event.i <= n:
            raise ValidationError(f"position {event.i} outside [1, {n}]")
        lo = np.zeros(n, dtype=np.int64)
        lo[event.i - 1] = event.h
        hi = None
        if isinstance(event, Marginal):
            hi = np.full(n, top, dtype=np.int64)
            hi[event.i - 1] = event.h
        r = Restriction(min_height=lo, max_height=hi)
    else:
        raise TypeError(f"unknown event {event!r}")
    try:
        restricted = build_tables(params, r, truncation=truncation)
    except EmptyStateSpace:
        return -math.inf
    return min(0.0, restricted.log_z - base.log_z)


def event_prob(event: Event, params: ModelParams, *, truncation: int | None = None) -> float:
    return math.exp(log_event_prob(event, params, truncation=truncation))


def write_event_csv(rows, fh) -> None:
    """rows: iterable of (event name, parameter, log-probability)."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["event", "parameter", "probability", "log_probability"])
    for name, par, lp in rows:
        writer.writerow([name, par, repr(math.exp(lp)), repr(float(lp))])


# ---------------------------------------------------------------------------
# sampling and exact moments


def _backward_sample(tables: TransferTables, rng: np.random.Generator, size: int) -> np.ndarray:
    p = tables.params
    beta = p.beta
    g = tables.restriction.gradient_cap
    hs = tables.heights.astype(np.float64)
    n = p.n
    out = np.empty((size, n), dtype=np.int64)
    block = max(1, int(4e6 // (tables.top + 1)))
    for start in range(0, size, block):
        m = min(block, size - start)
        u = rng.random((m, n))
        nxt = np.full(m, p.boundary_right, dtype=np.float64)
        for i in range(n - 1, -1, -1):
            dist = np.abs(hs[None, :] - nxt[:, None])
            logits = tables.log_forward[i][None, :] - beta * dist
            if g is not None:
                logits = np.where(dist >= g, -np.inf, logits)
            logits -= logits.max(axis=1, keepdims=True)
            cdf = np.cumsum(np.exp(logits), axis=1)
            target = u[:, i] * cdf[:, -1]
            k = (cdf < target[:, None]).sum(axis=1)
            np.minimum(k, tables.top, out=k)
            out[start:start + m, i] = k
            nxt = k.astype(np.float64)
    return out


def sample_exact(params: ModelParams, conditioning: Restriction | None = None, *, seed: int | None = None,
                 rng: np.random.Generator | None = None, size: int | None = None,
                 tables: TransferTables | None = None) -> np.ndarray:
    """Exact draw(s) from the Gibbs law conditioned on ``conditioning``.

    Returns one contour, or an array of shape (size, n) when ``size`` is given.
    """
    if rng is None:
        from sosmix.dynamics import stream

        rng = stream(0 if seed is None else seed)
    if tables is None:
        tables = build_tables(params, conditioning)
    draws = _backward_sample(tables, rng, 1 if size is None else int(size))
    return draws[0] if size is None else draws


def height_sum_moments(params: ModelParams, *, truncation: int | None = None) -> tuple[float, float]:
    """Exact mean and variance of ``sum_i eta(i)`` by a three-moment forward pass."""
    top = _height_top(params, truncation)
    allowed = _allowed(params, Restriction(), top)
    hs = np.arange(top + 1, dtype=np.float64)
    beta = params.beta
    lw = _boundary_log_weights(np.arange(top + 1), params.boundary_left, beta, None)
    lw[~allowed[0]] = -math.inf
    f0 = np.exp(lw - lw.max())
    f1 = hs * f0
    f2 = hs * hs * f0
    for i in range(1, params.n):
        k0 = _apply_full(f0, beta) * allowed[i]
        k1 = _apply_full(f1, beta) * allowed[i]
        k2 = _apply_full(f2, beta) * allowed[i]
        f0, f1, f2 = k0, k1 + hs * k0, k2 + 2.0 * hs * k1 + hs * hs * k0
        c = f0.max()
        f0, f1, f2 = f0 / c, f1 / c, f2 / c
    wr = np.exp(-beta * np.abs(hs - params.boundary_right))
    z, s1, s2 = np.dot(f0, wr), np.dot(f1, wr), np.dot(f2, wr)
    mean = s1 / z
    return float(mean), float(max(s2 / z - mean * mean, 0.0))


def max_height_moments(params: ModelParams, *, truncation: int | None = None) -> tuple[float, float]:
    """Exact mean and variance of ``max_i eta(i)`` from the restricted partition sums."""
    base = build_tables(params, truncation=truncation)
    cdf = np.zeros(base.top + 1)
    for m in range(base.top + 1):
        try:
            t = build_tables(params, Restriction(max_height=m), truncation=truncation)
            cdf[m] = math.exp(min(0.0, t.log_z - base.log_z))
        except EmptyStateSpace:
            cdf[m] = 0.0
    cdf[-1] = 1.0
    pmf = np.diff(np.concatenate(([0.0], cdf)))
    hs = np.arange(base.top + 1)
    mean = float(np.dot(hs, pmf))
    return mean, float(np.dot((hs - mean) ** 2, pmf))


def bounded_unbounded_tv(params: ModelParams) -> tuple[float, float]:
    """Total variation between the capped law and the unbounded law with the same n, beta, boundaries.

    The capped law is the unbounded one conditioned on ``max eta <= cap``,
    so the distance equals the unbounded probability of exceeding the cap.
    Returns ``(distance, truncation error bound)``.
    """
    if params.cap is None:
        raise ValidationError("needs a bounded parameter set")
    free = ModelParams(params.n, params.beta, height_mode="unbounded", boundary_left=params.boundary_left,
                       boundary_right=params.boundary_right, pinned=params.pinned)
    base = build_tables(free)
    return event_prob(Exceed(params.cap), free), base.truncation_error
