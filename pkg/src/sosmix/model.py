"""Solid-on-solid Gibbs measure and the single-column conditional law.

A contour is an integer height function ``eta(1..n)`` with fixed boundary
heights ``eta(0)`` and ``eta(n+1)``.  Its Gibbs weight is
``exp(-beta * sum_i |eta(i-1) - eta(i)|)``.  Given the two neighbour heights
of a column, with ``a = min`` and ``b = max``, the height of the column is
uniform on ``[a, b]`` and decays geometrically (ratio ``q = exp(-2 beta)``)
outside it, truncated at 0 below and at the cap ``H`` above (no upper
truncation in unbounded mode).

Contours are plain 1-D integer numpy arrays; ``ModelParams.validate`` is the
single place where they are checked against a parameter set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
import numpy as np

from sosmix import kernels

BOUNDED = "bounded"
UNBOUNDED = "unbounded"


class ValidationError(ValueError):
    """A contour or parameter set violates the model constraints."""


class InvariantError(RuntimeError):
    """An internal invariant (e.g. coupling order) was broken."""


@dataclass(frozen=True)
class ModelParams:
    """Lattice length, inverse temperature, height set, boundaries and pins.

    ``cap`` defaults to ``n`` in bounded mode and is ``None`` in unbounded
    mode.  ``pinned`` holds 1-based positions whose height is always 0.
    """

    n: int
    beta: float
    height_mode: str = BOUNDED
    cap: int | None = None
    boundary_left: int = 0
    boundary_right: int = 0
    pinned: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n!r}")
        if not (self.beta > 0) or not math.isfinite(self.beta):
            raise ValidationError(f"beta must be positive and finite, got {self.beta!r}")
        if self.height_mode not in (BOUNDED, UNBOUNDED):
            raise ValidationError(f"unknown height mode {self.height_mode!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "pinned", frozenset(int(p) for p in self.pinned))
        if self.height_mode == BOUNDED:
            cap = self.n if self.cap is None else int(self.cap)
            if cap < 0:
                raise ValidationError("height cap must be nonnegative")
            object.__setattr__(self, "cap", cap)
        elif self.cap is not None:
            raise ValidationError("unbounded mode takes no height cap")
        for bh in (self.boundary_left, self.boundary_right):
            if int(bh) != bh or bh < 0:
                raise ValidationError(f"boundary heights must be nonnegative integers, got {bh!r}")
            if self.cap is not None and bh > self.cap:
                raise ValidationError(f"boundary height {bh} exceeds cap {self.cap}")
        bad = [p for p in self.pinned if not 1 <= p <= self.n]
        if bad:
            raise ValidationError(f"pinned positions out of range [1, {self.n}]: {sorted(bad)}")

    @property
    def bounded(self) -> bool:
        return self.height_mode == BOUNDED

    @property
    def q(self) -> float:
        """Geometric decay ratio exp(-2 beta) of the conditional law."""
        return math.exp(-2.0 * self.beta)

    @property
    def kernel_cap(self) -> int:
        """Cap as passed to the compiled kernels; -1 encodes unbounded."""
        return -1 if self.cap is None else self.cap

    def pin_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=np.bool_)
        for p in self.pinned:
            mask[p - 1] = True
        return mask

    def with_pins_every(self, m: int) -> "ModelParams":
        """Copy with heights pinned to zero at positions m, 2m, ..., floor(n/m) m."""
        if m < 1:
            raise ValidationError("pin spacing must be >= 1")
        return replace(self, pinned=frozenset(range(m, self.n + 1, m)))

    def bottom(self) -> np.ndarray:
        return np.zeros(self.n, dtype=np.int64)

    def top(self) -> np.ndarray:
        if self.cap is None:
            raise ValidationError("unbounded mode has no maximal contour")
        h = np.full(self.n, self.cap, dtype=np.int64)
        h[self.pin_mask()] = 0
        return h

    def validate(self, heights) -> np.ndarray:
        """Return ``heights`` as an int64 array after checking it against these params."""
        arr = np.asarray(heights)
        if arr.ndim != 1 or arr.shape[0] != self.n:
            raise ValidationError(f"expected {self.n} heights, got shape {arr.shape}")
        if arr.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ValidationError("heights must be integers")
        arr = arr.astype(np.int64)
        if arr.size and arr.min() < 0:
            raise ValidationError("heights must be nonnegative")
        if self.cap is not None and arr.size and arr.max() > self.cap:
            raise ValidationError(f"height exceeds cap {self.cap}")
        if self.pinned and np.any(arr[self.pin_mask()] != 0):
            raise ValidationError("pinned positions must have height 0")
        return arr

    def extended(self, heights) -> np.ndarray:
        """Heights with the two boundary heights attached at both ends."""
        h = self.validate(heights)
        return np.concatenate(([self.boundary_left], h, [self.boundary_right]))


def energy(contour, params: ModelParams) -> int:
    """Sum of |eta(i-1) - eta(i)| over i = 1..n+1, boundaries included."""
    ext = params.extended(contour)
    return int(np.abs(np.diff(ext)).sum())


def log_gibbs_weight(contour, params: ModelParams) -> float:
    """Unnormalised log Gibbs weight, ``-beta * energy``."""
    return -params.beta * energy(contour, params)


def leq(contour1, contour2) -> bool:
    """Pointwise partial order: True iff contour1(i) <= contour2(i) for all i."""
    c1 = np.asarray(contour1)
    c2 = np.asarray(contour2)
    if c1.shape != c2.shape:
        raise ValidationError(f"length mismatch: {c1.shape} vs {c2.shape}")
    return bool(np.all(c1 <= c2))


# ---------------------------------------------------------------------------
# geometric tail sums


@dataclass(frozen=True)
class TailSums:
    """``S_m = sum_{j=1}^m q^j`` and the conditional mean offset ``T_m``.

    ``m`` may be ``math.inf``.  ``T_0`` is defined as 0 (empty tail).
    """

    m: float
    S_m: float
    T_m: float
    S_inf: float


def s_inf(beta: float) -> float:
    return 1.0 / math.expm1(2.0 * beta)


def tail_sum(m, beta: float) -> float:
    """S_m in closed form, ``S_inf * (1 - q^m)``."""
    if m == 0:
        return 0.0
    if math.isinf(m):
        return s_inf(beta)
    return s_inf(beta) * -math.expm1(-2.0 * beta * m)


def tail_mean_offset(m, beta: float) -> float:
    """T_m = (sum_{j=1}^m j q^j) / S_m = 1/(1-q) - m q^m / (1 - q^m)."""
    if m == 0:
        return 0.0
    first = 1.0 / -math.expm1(-2.0 * beta)
    if math.isinf(m):
        return first
    return first - m * math.exp(-2.0 * beta * m) / -math.expm1(-2.0 * beta * m)


def tail_sums(m, beta: float) -> TailSums:
    return TailSums(m=m, S_m=tail_sum(m, beta), T_m=tail_mean_offset(m, beta), S_inf=s_inf(beta))


# ---------------------------------------------------------------------------
# conditional law of one column


@dataclass(frozen=True)
class ConditionalLaw:
    """Law of a column height given neighbour heights ``a <= b``.

    ``Z`` is the normaliser of the unnormalised weights
    ``exp(-beta(b-a) - 2 beta dist(j, [a, b]))``; ``S_low`` and ``S_high``
    are the geometric masses below ``a`` and above ``b`` relative to the
    uniform block.
    """

    a: int
    b: int
    params: ModelParams
    Z: float
    S_low: float
    S_high: float

    @property
    def reduced_norm(self) -> float:
        """``Z * exp(beta (b-a))``: total mass with unit weight on [a, b]."""
        return self.S_low + (self.b - self.a + 1) + self.S_high

    def support_max(self, tol: float = 1e-20) -> int:
        """Largest height carried; in unbounded mode a truncation past mass ``tol``."""
        if self.params.cap is not None:
            return self.params.cap
        beta = self.params.beta
        # q^k/(1-q) * (b+k) < tol * norm; generous margin for first moments.
        k = math.ceil((math.log(1.0 / tol) + math.log(self.b + 10.0)) / (2.0 * beta)) + 2
        return self.b + k

    def pmf(self, heights=None) -> np.ndarray:
        """Probabilities at ``heights`` (default: 0..support_max())."""
        if heights is None:
            heights = np.arange(self.support_max() + 1)
        j = np.asarray(heights, dtype=np.float64)
        dist = np.maximum(self.a - j, 0.0) + np.maximum(j - self.b, 0.0)
        p = np.exp(-2.0 * self.params.beta * dist) / self.reduced_norm
        p[(j < 0)] = 0.0
        if self.params.cap is not None:
            p[j > self.params.cap] = 0.0
        return p

    def cdf(self, heights=None) -> np.ndarray:
        return np.cumsum(self.pmf(heights))


def conditional_law(a: int, b: int, params: ModelParams) -> ConditionalLaw:
    if a > b:
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    if a < 0:
        raise ValueError("neighbour heights must be nonnegative")
    if params.cap is not None and b > params.cap:
        raise ValueError(f"neighbour height {b} exceeds cap {params.cap}")
    beta = params.beta
    s_low = tail_sum(a, beta)
    s_high = tail_sum(math.inf if params.cap is None else params.cap - b, beta)
    z = math.exp(-beta * (b - a)) * (s_low + (b - a + 1) + s_high)
    return ConditionalLaw(a=int(a), b=int(b), params=params, Z=z, S_low=s_low, S_high=s_high)


def conditional_cdf_sample(law: ConditionalLaw, r: float) -> int:
    """Inverse-CDF draw: the least height k with cumulative mass >= r.

    Deterministic in ``(law, r)`` and nondecreasing in ``r`` and in the
    neighbour pair, which is what makes the column coupling monotone.
    """
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must lie in [0, 1), got {r!r}")
    p = law.params
    return int(kernels.col_sample(law.a, law.b, p.kernel_cap, p.q, r))


def conditional_mean_direct(a: int, b: int, params: ModelParams) -> float:
    """Mean column height by direct summation over the support."""
    law = conditional_law(a, b, params)
    hs = np.arange(law.support_max() + 1)
    return float(np.dot(hs, law.pmf(hs)))


def epsilon(a: int, b: int, params: ModelParams) -> float:
    """Barrier-induced upward shift of the conditional mean (requires a + b <= cap).

    Closed form ``Pr[eta > a+b] * ((a+b)/2 + T_{cap-(a+b)})`` with
    ``Pr[eta > a+b] = q^a S_{cap-(a+b)} / (S_a + (b-a+1) + S_{cap-b})``.
    """
    if a > b:
        raise ValueError(f"need a <= b, got a={a}, b={b}")
    beta = params.beta
    if params.cap is None:
        m = math.inf
        s_high = s_inf(beta)
    else:
        if a + b > params.cap:
            raise ValueError(f"epsilon needs a + b <= {params.cap}; use the reflected form")
        m = params.cap - (a + b)
        s_high = tail_sum(params.cap - b, beta)
    if m == 0:
        return 0.0
    norm = tail_sum(a, beta) + (b - a + 1) + s_high
    p_above = math.exp(-2.0 * beta * a) * tail_sum(m, beta) / norm
    return p_above * ((a + b) / 2.0 + tail_mean_offset(m, beta))


def conditional_mean(a: int, b: int, params: ModelParams) -> float:
    """Closed-form conditional mean; a + b > cap is served by reflection h -> cap - h."""
    if params.cap is None or a + b <= params.cap:
        return (a + b) / 2.0 + epsilon(a, b, params)
    H = params.cap
    return (a + b) / 2.0 - epsilon(H - b, H - a, params)


def mean_sandwich(aU: int, bU: int, cL: int, dL: int, params: ModelParams) -> tuple[float, float]:
    """Mean gap of coupled column updates and its Laplacian upper bound.

    ``(aU, bU)`` are the sorted neighbour heights of the upper contour and
    ``(cL, dL)`` those of the lower one.  Returns
    ``(E[upper'] - E[lower'], (aU+bU)/2 - (cL+dL)/2)``; the first lies in
    ``[0, second]``.
    """
    if not (aU <= bU and cL <= dL):
        raise ValueError("neighbour pairs must be sorted")
    if not (cL <= min(aU, dL) and max(aU, dL) <= bU):
        raise ValueError(f"pairs not ordered: (a,b)=({aU},{bU}), (c,d)=({cL},{dL})")
    diff = conditional_mean(aU, bU, params) - conditional_mean(cL, dL, params)
    return diff, (aU + bU) / 2.0 - (cL + dL) / 2.0


def neighbour_pairs(ext: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted neighbour heights ``(a, b)`` of every interior column of an extended contour."""
    left = ext[:-2]
    right = ext[2:]
    return np.minimum(left, right), np.maximum(left, right)

