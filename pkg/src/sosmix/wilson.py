"""Laplacian eigenvector weights, the weighted coupling distance and the gap test function.

``w(i) = cos(-pi/2 + pi i/(n+1)) = sin(pi i/(n+1))`` is the top eigenvector
of the discrete Laplacian ``(Delta g)(i) = g(i) - (g(i-1) + g(i+1))/2`` on
[1, n] with zero boundary values, eigenvalue ``lambda = 1 - cos(pi/(n+1))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sosmix.model import ModelParams, ValidationError, conditional_law


@dataclass(frozen=True)
class WilsonWeights:
    w: np.ndarray
    lam: float
    w_min: float

    @property
    def n(self) -> int:
        return self.w.shape[0]


def weights(n: int) -> WilsonWeights:
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(1, n + 1)
    w = np.cos(-math.pi / 2 + math.pi * i / (n + 1))
    w.setflags(write=False)
    return WilsonWeights(w=w, lam=1.0 - math.cos(math.pi / (n + 1)), w_min=float(w[0]))


def laplacian(g: np.ndarray) -> np.ndarray:
    """Discrete Laplacian with zero boundary values."""
    padded = np.concatenate(([0.0], np.asarray(g, dtype=np.float64), [0.0]))
    return padded[1:-1] - 0.5 * (padded[:-2] + padded[2:])


def distance(lower, upper, ww: WilsonWeights) -> float:
    """``D = sum_i w(i) (upper(i) - lower(i))`` for an ordered pair."""
    lo = np.asarray(lower)
    hi = np.asarray(upper)
    if lo.shape != hi.shape or lo.shape[0] != ww.n:
        raise ValidationError("pair and weights must have the same length")
    gap = hi - lo
    if np.any(gap < 0):
        raise ValidationError("pair is not ordered (lower must be <= upper pointwise)")
    return float(np.dot(ww.w, gap))


def tilt_coefficients(n: int) -> np.ndarray:
    """Coefficient of eta(j) in ``f(eta) = sum_i w(i)(eta(i+1) - eta(i-1))``: w(j-1) - w(j+1)."""
    wpad = np.concatenate(([0.0], weights(n).w, [0.0]))
    return wpad[:-2] - wpad[2:]


def gap_test_function(contour, ww: WilsonWeights, params: ModelParams | None = None) -> float:
    """``f(eta) = sum_i w(i) (eta(i+1) - eta(i-1))`` with boundary heights substituted."""
    h = np.asarray(contour, dtype=np.float64)
    if h.shape[0] != ww.n:
        raise ValidationError("contour and weights must have the same length")
    bl = params.boundary_left if params is not None else 0
    br = params.boundary_right if params is not None else 0
    ext = np.concatenate(([bl], h, [br]))
    return float(np.dot(ww.w, ext[2:] - ext[:-2]))


def _moment_tables(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of the conditional law for every sorted pair (a, b)."""
    H = params.cap
    m1 = np.zeros((H + 1, H + 1))
    m2 = np.zeros((H + 1, H + 1))
    hs = np.arange(H + 1, dtype=np.float64)
    for a in range(H + 1):
        for b in range(a, H + 1):
            p = conditional_law(a, b, params).pmf(hs)
            m1[a, b] = m1[b, a] = np.dot(hs, p)
            m2[a, b] = m2[b, a] = np.dot(hs * hs, p)
    return m1, m2


def _move_energy(samples: np.ndarray, kind: str, params: ModelParams) -> np.ndarray:
    """Per-sample ``sum_eta' P(eta -> eta') (f(eta) - f(eta'))^2`` for local or column moves."""
    n = params.n
    c2 = tilt_coefficients(n) ** 2
    live = ~params.pin_mask()
    N = samples.shape[0]
    ext = np.empty((N, n + 2), dtype=np.int64)
    ext[:, 0] = params.boundary_left
    ext[:, -1] = params.boundary_right
    ext[:, 1:-1] = samples
    a = np.minimum(ext[:, :-2], ext[:, 2:])
    b = np.maximum(ext[:, :-2], ext[:, 2:])
    h = samples
    if kind == "column":
        m1, m2 = _moment_tables(params)
        sq = m2[a, b] - 2.0 * h * m1[a, b] + h.astype(np.float64) ** 2
    elif kind == "single_site":
        q = params.q
        p_down = np.where(h > a, 0.25, 0.25 * q) * (h > 0)
        p_up = np.where(h < b, 0.25, 0.25 * q) * (h < params.cap)
        sq = p_down + p_up
    else:
        raise ValueError(f"montecarlo mode supports single_site and column, not {kind!r}")
    return (sq * (c2 * live)).sum(axis=1) / n


def gap_upper_bound(kind: str, params: ModelParams, mode: str = "exact", *,
                    samples: int = 4000, seed: int = 0) -> float:
    """Rayleigh quotient of the Wilson test function: an upper bound on the spectral gap.

    ``exact`` enumerates the state space (small n only); ``montecarlo``
    averages the exact per-state move energy over exact equilibrium draws.
    """
    if params.cap is None:
        raise ValidationError("gap bound needs bounded heights")
    coeff = tilt_coefficients(params.n) * ~params.pin_mask()
    if not np.any(coeff != 0):
        raise ValidationError("test function is constant for this n; variance is zero")
    if mode == "exact":
        from sosmix import exact

        chain = exact.enumerate_states(params)
        P = exact.transition_matrix(kind, chain)
        mu = chain.stationary
        f = chain.states.astype(np.float64) @ tilt_coefficients(params.n)
        var = float(mu @ (f - mu @ f) ** 2)
        if var <= 1e-300:
            raise ValidationError("test function has zero variance")
        diff2 = (f[:, None] - f[None, :]) ** 2
        num = 0.5 * float(np.sum(mu[:, None] * P * diff2))
        return num / var
    if mode == "montecarlo":
        from sosmix.equilibrium import sample_exact
        from sosmix.dynamics import stream

        draws = sample_exact(params, None, rng=stream(seed), size=samples)
        f = draws.astype(np.float64) @ tilt_coefficients(params.n)
        var = float(np.var(f, ddof=1))
        if var <= 0:
            raise ValidationError("test function has zero sample variance")
        num = 0.5 * float(_move_energy(draws, kind, params).mean())
        return num / var
    raise ValueError(f"unknown mode {mode!r}")
