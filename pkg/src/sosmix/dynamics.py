"""Glauber dynamics for the SOS contour: single-site, column and parallel sweeps.

Randomness is factored into explicit draws so that any trajectory can be
replayed and so that the same draws drive several copies at once (the grand
coupling).  ``ss_step``/``col_step``/``par_sweep`` are the readable
reference steps; the long runs go through the compiled loops in
``sosmix.kernels``, which consume the same draws.

Replica streams: stream ``k`` of master seed ``s`` is a PCG64 generator
seeded with ``SeedSequence(s, spawn_key=(k,))``.  Runs are therefore
extensible in the number of replicas without overlapping streams.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from sosmix import kernels
from sosmix.model import (
    ModelParams,
    ValidationError,
    conditional_cdf_sample,
    conditional_law,
    neighbour_pairs,
)

CHUNK = 1 << 16

KINDS = ("single_site", "column", "parallel")


def stream(seed: int, k: int = 0) -> np.random.Generator:
    """Independent generator for replica ``k`` of master seed ``seed``."""
    if seed < 0 or k < 0:
        raise ValueError("seed and replica index must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(k),))))


class DrawStream:
    """Buffered stream of (position index, uniform) draws.

    Draws are generated in fixed blocks of ``CHUNK`` positions followed by
    ``CHUNK`` uniforms, so the sequence depends only on the generator and
    not on how callers slice it.
    """

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._pos = np.empty(0, dtype=np.int64)
        self._x = np.empty(0)
        self._k = 0

    def _refill(self):
        self._pos = self.rng.integers(0, self.n, size=CHUNK, dtype=np.int64)
        self._x = self.rng.random(CHUNK)
        self._k = 0

    def take(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        parts_p, parts_x = [], []
        while count > 0:
            if self._k >= self._pos.shape[0]:
                self._refill()
            m = min(count, self._pos.shape[0] - self._k)
            parts_p.append(self._pos[self._k:self._k + m])
            parts_x.append(self._x[self._k:self._k + m])
            self._k += m
            count -= m
        if not parts_p:
            return np.empty(0, dtype=np.int64), np.empty(0)
        if len(parts_p) == 1:
            return parts_p[0], parts_x[0]
        return np.concatenate(parts_p), np.concatenate(parts_x)

    def take_uniforms(self, count: int) -> np.ndarray:
        """Uniforms only (used by the parallel sweeps); positions are discarded."""
        return self.take(count)[1]


@dataclass(frozen=True)
class UpdateDraw:
    """Randomness of one update at 1-based ``position``.

    Single-site updates use ``direction`` (-1 or +1) and the acceptance
    variable ``u``; column updates use ``r``.
    """

    position: int
    direction: int = -1
    u: float = 0.0
    r: float = 0.0

    @classmethod
    def from_uniform(cls, position: int, v: float) -> "UpdateDraw":
        """Decode one uniform as the compiled kernels do (fair coin, then acceptance)."""
        if v < 0.5:
            return cls(position=position, direction=-1, u=2.0 * v, r=v)
        return cls(position=position, direction=+1, u=2.0 * v - 1.0, r=v)


@dataclass(frozen=True)
class ChainKind:
    """single_site | column | parallel (order OE or EO), optionally pinned every ``pin_spacing``."""

    name: str
    order: str = "OE"
    pin_spacing: int | None = None

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown chain kind {self.name!r}")
        if self.order not in ("OE", "EO"):
            raise ValueError(f"parallel order must be OE or EO, got {self.order!r}")
        if self.pin_spacing is not None and self.pin_spacing < 1:
            raise ValueError("pin spacing must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "ChainKind":
        """Parse ``single_site``, ``column``, ``parallel:EO`` or ``pinned:<m>:<base>``."""
        parts = text.strip().split(":")
        if parts[0] == "pinned":
            if len(parts) < 2:
                raise ValueError("pinned kind needs a spacing, e.g. pinned:4:single_site")
            base = cls.parse(":".join(parts[2:]) or "single_site")
            return replace(base, pin_spacing=int(parts[1]))
        if parts[0] == "parallel":
            return cls("parallel", order=parts[1] if len(parts) > 1 else "OE")
        if len(parts) != 1:
            raise ValueError(f"cannot parse chain kind {text!r}")
        return cls(parts[0])

    @property
    def code(self) -> int:
        if self.name == "single_site":
            return kernels.SINGLE_SITE
        if self.name == "column":
            return kernels.COLUMN
        raise ValueError("parallel kind has no single-update kernel code")

    def params_for(self, params: ModelParams) -> ModelParams:
        if self.pin_spacing is None:
            return params
        return params.with_pins_every(self.pin_spacing)

    def __str__(self):
        base = self.name if self.name != "parallel" else f"parallel:{self.order}"
        if self.pin_spacing is not None:
            return f"pinned:{self.pin_spacing}:{base}"
        return base


# ---------------------------------------------------------------------------
# reference single steps


def _neighbours(h: np.ndarray, i: int, params: ModelParams) -> tuple[int, int]:
    left = h[i - 1] if i > 0 else params.boundary_left
    right = h[i + 1] if i < params.n - 1 else params.boundary_right
    return (int(left), int(right)) if left <= right else (int(right), int(left))


def ss_step(contour, draw: UpdateDraw, params: ModelParams) -> np.ndarray:
    """One single-site heat-bath step.

    The proposed direction is accepted when ``u < 2 p``, where ``p`` is 1/4
    when the move heads towards the neighbour interval [a, b] (or stays in
    it) and ``exp(-2 beta)/4`` when it leaves it.  Moves below 0 or above
    the cap are self-loops.
    """
    h = params.validate(contour).copy()
    i = draw.position - 1
    if not 0 <= i < params.n:
        raise ValidationError(f"position {draw.position} outside [1, {params.n}]")
    if (i + 1) in params.pinned:
        return h
    a, b = _neighbours(h, i, params)
    if draw.direction < 0:
        p = 0.25 if h[i] > a else 0.25 * params.q
        if draw.u < 2.0 * p:
            h[i] = max(h[i] - 1, 0)
    else:
        p = 0.25 if h[i] < b else 0.25 * params.q
        if draw.u < 2.0 * p:
            h[i] = h[i] + 1 if params.cap is None else min(h[i] + 1, params.cap)
    return h


def col_step(contour, draw: UpdateDraw, params: ModelParams) -> np.ndarray:
    """One column (non-local heat-bath) step: resample the height at the drawn position."""
    h = params.validate(contour).copy()
    i = draw.position - 1
    if not 0 <= i < params.n:
        raise ValidationError(f"position {draw.position} outside [1, {params.n}]")
    if (i + 1) in params.pinned:
        return h
    a, b = _neighbours(h, i, params)
    h[i] = conditional_cdf_sample(conditional_law(a, b, params), draw.r)
    return h


def _parity_index(params: ModelParams, parity: str) -> np.ndarray:
    if parity not in ("odd", "even"):
        raise ValueError(f"parity must be 'odd' or 'even', got {parity!r}")
    start = 0 if parity == "odd" else 1  # 1-based odd positions are indices 0, 2, ...
    idx = np.arange(start, params.n, 2)
    if params.pinned:
        idx = idx[~params.pin_mask()[idx]]
    return idx


def par_sweep(contour, parity: str, rng_stream, params: ModelParams, *, validate: bool = True) -> np.ndarray:
    """Column-update every position of one parity at once.

    ``rng_stream`` is a ``numpy.random.Generator``, a ``DrawStream`` or an
    array of ``n`` uniforms (entry ``i`` drives position ``i+1``).  Exactly
    ``n`` uniforms are consumed from a generator or stream, whatever the
    parity, so coupled copies stay in lockstep.
    """
    h = params.validate(contour).copy() if validate else contour.copy()
    if isinstance(rng_stream, np.random.Generator):
        r = rng_stream.random(params.n)
    elif isinstance(rng_stream, DrawStream):
        r = rng_stream.take_uniforms(params.n)
    else:
        r = np.asarray(rng_stream, dtype=np.float64)
        if r.shape != (params.n,):
            raise ValueError(f"need {params.n} uniforms, got shape {r.shape}")
    idx = _parity_index(params, parity)
    if idx.size == 0:
        return h
    ext = np.concatenate(([params.boundary_left], h, [params.boundary_right]))
    a, b = neighbour_pairs(ext)
    h[idx] = kernels.col_sample_vec(a[idx], b[idx], params.kernel_cap, params.q, r[idx])
    return h


def par_step(contour, order: str, rng_stream, params: ModelParams, *, validate: bool = True) -> np.ndarray:
    """One step of the OE (or EO) chain: two alternating parity sweeps."""
    first, second = ("odd", "even") if order == "OE" else ("even", "odd")
    h = par_sweep(contour, first, rng_stream, params, validate=validate)
    return par_sweep(h, second, rng_stream, params, validate=False)


# ---------------------------------------------------------------------------
# long runs


def advance(h: np.ndarray, kind: ChainKind, steps: int, draws: DrawStream, params: ModelParams) -> np.ndarray:
    """Advance ``h`` in place by ``steps`` steps of ``kind`` (params already pinned)."""
    if kind.name == "parallel":
        for _ in range(steps):
            h[:] = par_step(h, kind.order, draws, params, validate=False)
        return h
    pinned = params.pin_mask()
    remaining = steps
    while remaining > 0:
        m = min(remaining, CHUNK)
        pos, x = draws.take(m)
        kernels.run_draws(h, kind.code, params.boundary_left, params.boundary_right,
                          params.kernel_cap, params.q, pinned, pos, x)
        remaining -= m
    return h


def _max_gradient(h: np.ndarray, params: ModelParams) -> int:
    ext = np.concatenate(([params.boundary_left], h, [params.boundary_right]))
    return int(np.abs(np.diff(ext)).max())


STATISTICS: dict[str, Callable] = {
    "mean_height": lambda h, p, ref, w: float(h.mean()),
    "max_height": lambda h, p, ref, w: float(h.max()),
    "max_gradient": lambda h, p, ref, w: float(_max_gradient(h, p)),
    "distance": lambda h, p, ref, w: float(np.dot(w, np.abs(h - ref))),
}


@dataclass
class Trajectory:
    """Final contour plus the recorded ``(step, statistic, value)`` series."""

    final: np.ndarray
    records: list = field(default_factory=list)

    def series(self, stat: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [(s, v) for s, name, v in self.records if name == stat]
        if not rows:
            return np.empty(0, dtype=np.int64), np.empty(0)
        s, v = zip(*rows)
        return np.asarray(s), np.asarray(v)

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "statistic", "value"])
        for s, name, v in self.records:
            writer.writerow([s, name, repr(float(v))])


def run_chain(kind: ChainKind, start, steps: int, seed: int, params: ModelParams, *,
              statistics: Sequence[str] = ("mean_height",), stride: int | None = None,
              reference=None, replica: int = 0) -> Trajectory:
    """Run ``steps`` steps of ``kind`` from ``start`` and record statistics every ``stride`` steps.

    The default stride is ``n**2``.  ``reference`` (default: the bottom
    contour) is the comparison contour of the ``distance`` statistic, which
    is the Wilson-weighted L1 distance.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps >= 2 ** 62:
        raise OverflowError("step count too large")
    unknown = [s for s in statistics if s not in STATISTICS]
    if unknown:
        raise ValueError(f"unknown statistic(s): {unknown}")
    params = kind.params_for(params)
    h = params.validate(start).copy()
    stride = params.n ** 2 if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ref = params.bottom() if reference is None else params.validate(reference)
    from sosmix.wilson import weights

    w = weights(params.n).w
    draws = DrawStream(params.n, stream(seed, replica))
    traj = Trajectory(final=h)

    def record(t):
        for name in statistics:
            traj.records.append((t, name, STATISTICS[name](h, params, ref, w)))

    record(0)
    done = 0
    while done < steps:
        m = min(stride, steps - done)
        advance(h, kind, m, draws, params)
        done += m
        record(done)
    traj.final = h
    return traj


# ---------------------------------------------------------------------------
# censored schedules


PATTERNS = ("odd", "even", "free", "none")


def epoch_constants(n: int, D: int) -> dict:
    """Epoch bookkeeping of the censored construction (natural logs).

    ``t = 2 n^3 D^2 log^8 n`` split into ``M = n^2 log^2 n`` epochs of length
    ``m = 2 n D^2 log^6 n``.  Housed for reference; these lengths are far
    beyond desk scale and are not used as literal run lengths.
    """
    L = math.log(n)
    return {"t": 2 * n ** 3 * D ** 2 * L ** 8, "M": n ** 2 * L ** 2, "m": 2 * n * D ** 2 * L ** 6}


@dataclass(frozen=True)
class CensorSchedule:
    """Epoch structure for censored single-site runs.

    Each of the ``epochs`` epochs consists of ``epoch_length`` uniformly
    random single-site updates; updates whose 1-based position parity
    differs from the epoch's pattern are discarded.  ``D`` is the log inverse
    probability of the conditioning event (``ceil(log(1/mu(A)))``).
    """

    epochs: int
    epoch_length: int
    patterns: tuple
    D: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.epoch_length < 1 or self.D < 1:
            raise ValueError("epochs, epoch_length and D must be positive")
        if len(self.patterns) != self.epochs:
            raise ValueError("need one parity pattern per epoch")
        bad = [p for p in self.patterns if p not in PATTERNS]
        if bad:
            raise ValueError(f"unknown patterns {bad}; use {PATTERNS}")

    @classmethod
    def alternating(cls, epochs: int, epoch_length: int, first: str = "odd", D: int = 1) -> "CensorSchedule":
        """The OE (first='odd') or EO (first='even') schedule."""
        other = "even" if first == "odd" else "odd"
        pats = tuple(first if k % 2 == 0 else other for k in range(epochs))
        return cls(epochs, epoch_length, pats, D)

    @staticmethod
    def log_inverse_probability(prob_a: float) -> int:
        if not 0 < prob_a <= 1:
            raise ValueError("event probability must lie in (0, 1]")
        return max(1, math.ceil(math.log(1.0 / prob_a)))


_PARITY_CODE = {"odd": 1, "even": 0, "free": -1, "none": -2}


@dataclass
class CensoredResult:
    final: np.ndarray
    in_b: np.ndarray  # per-draw membership of the contour in the gradient event
    applied: int
    threshold: int

    @property
    def visits(self) -> np.ndarray:
        """Draw indices at which the contour was in the gradient event."""
        return np.flatnonzero(self.in_b)


def default_gradient_threshold(n: int) -> int:
    return max(1, math.ceil(4 * math.log(n))) if n > 1 else 1


def censored_run(schedule: CensorSchedule, start, seed: int, params: ModelParams, *,
                 threshold: int | None = None, replica: int = 0) -> CensoredResult:
    """Replay a censored single-site schedule and log the gradient event.

    ``start`` is a contour or an ``equilibrium.Conditioning``; in the latter
    case the start is an exact draw from the conditioned Gibbs law using
    the same replica stream.  The gradient event is
    ``{exists i in [0, n]: |eta(i+1) - eta(i)| >= threshold}``.
    """
    rng = stream(seed, replica)
    if isinstance(start, np.ndarray) or isinstance(start, (list, tuple)):
        h = params.validate(start).copy()
    else:
        from sosmix.equilibrium import sample_exact

        h = sample_exact(params, start, rng=rng)
    thr = default_gradient_threshold(params.n) if threshold is None else int(threshold)
    draws = DrawStream(params.n, rng)
    pinned = params.pin_mask()
    logs = []
    applied = 0
    for pattern in schedule.patterns:
        pos, x = draws.take(schedule.epoch_length)
        log_b = np.zeros(pos.shape[0], dtype=np.bool_)
        applied += kernels.run_draws_censored(
            h, kernels.SINGLE_SITE, params.boundary_left, params.boundary_right,
            params.kernel_cap, params.q, pinned, pos, x, _PARITY_CODE[pattern], thr, log_b)
        logs.append(log_b)
    return CensoredResult(final=h, in_b=np.concatenate(logs), applied=applied, threshold=thr)
