"""Brute-force oracle for tiny systems: enumeration, dense transition matrices, TV curves, gaps."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from sosmix.model import ModelParams, ValidationError, conditional_law, conditional_mean, conditional_mean_direct, epsilon

MAX_STATES = 10 ** 6
# dense float64 matrices stay below 8 GB
MAX_MATRIX_STATES = int(math.sqrt(8e9 / 8))


class StateSpaceTooLarge(ValidationError):
    pass


@dataclass
class ExactChain:
    """All contours of a (bounded) parameter set with their Gibbs masses."""

    params: ModelParams
    states: np.ndarray       # (S, n) int64
    codes: np.ndarray        # mixed-radix code of each state
    lookup: np.ndarray       # code -> state index, -1 where not a state
    stationary: np.ndarray   # (S,)
    weights_sum: float       # sum of exp(-beta * energy)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index(self, contour) -> int:
        h = np.asarray(contour, dtype=np.int64)
        base = self.params.cap + 1
        code = int(np.dot(h, base ** np.arange(self.params.n, dtype=np.int64)))
        k = int(self.lookup[code])
        if k < 0:
            raise ValidationError(f"{h.tolist()} is not a valid state")
        return k

    def point_mass(self, contour) -> np.ndarray:
        v = np.zeros(self.size)
        v[self.index(contour)] = 1.0
        return v


def enumerate_states(params: ModelParams) -> ExactChain:
    if params.cap is None:
        raise ValidationError("exact enumeration needs bounded heights")
    n, H = params.n, params.cap
    total = (H + 1) ** n
    if total > MAX_STATES:
        raise StateSpaceTooLarge(f"(H+1)^n = {total} exceeds {MAX_STATES}")
    grid = np.indices((H + 1,) * n).reshape(n, -1).T[:, ::-1]  # column j is position j+1
    codes = grid @ ((H + 1) ** np.arange(n, dtype=np.int64))
    keep = np.ones(total, dtype=bool)
    for p in params.pinned:
        keep &= grid[:, p - 1] == 0
    grid = np.ascontiguousarray(grid[keep])
    codes = codes[keep]
    lookup = np.full(total, -1, dtype=np.int64)
    lookup[codes] = np.arange(codes.shape[0])
    ext = np.empty((grid.shape[0], n + 2), dtype=np.int64)
    ext[:, 0] = params.boundary_left
    ext[:, -1] = params.boundary_right
    ext[:, 1:-1] = grid
    energies = np.abs(np.diff(ext, axis=1)).sum(axis=1)
    logw = -params.beta * energies
    shift = logw.max()
    w = np.exp(logw - shift)
    mu = w / w.sum()
    return ExactChain(params=params, states=grid, codes=codes, lookup=lookup,
                      stationary=mu, weights_sum=float(w.sum() * math.exp(shift)))


def _law_table(params: ModelParams) -> np.ndarray:
    H = params.cap
    table = np.zeros((H + 1, H + 1, H + 1))
    hs = np.arange(H + 1)
    for a in range(H + 1):
        for b in range(a, H + 1):
            table[a, b] = table[b, a] = conditional_law(a, b, params).pmf(hs)
    return table


def _neighbour_ab(chain: ExactChain, i: int) -> tuple[np.ndarray, np.ndarray]:
    p = chain.params
    s = chain.states
    left = s[:, i - 1] if i > 0 else np.full(chain.size, p.boundary_left)
    right = s[:, i + 1] if i < p.n - 1 else np.full(chain.size, p.boundary_right)
    return np.minimum(left, right), np.maximum(left, right)


def _column_update_matrix(chain: ExactChain, i: int, table: np.ndarray) -> np.ndarray:
    """Resample position i (0-based) from its conditional law."""
    S = chain.size
    K = np.zeros((S, S))
    if (i + 1) in chain.params.pinned:
        np.fill_diagonal(K, 1.0)
        return K
    H = chain.params.cap
    base = (H + 1) ** i
    a, b = _neighbour_ab(chain, i)
    probs = table[a, b]                                   # (S, H+1)
    stripped = chain.codes - chain.states[:, i] * base
    targets = chain.lookup[stripped[:, None] + base * np.arange(H + 1)[None, :]]
    rows = np.repeat(np.arange(S), H + 1)
    np.add.at(K, (rows, targets.ravel()), probs.ravel())
    return K


def _check_size(chain: ExactChain):
    if chain.size > MAX_MATRIX_STATES:
        raise StateSpaceTooLarge(f"{chain.size} states is too many for a dense matrix")


def transition_matrix(kind, chain: ExactChain) -> np.ndarray:
    """Exact one-step matrix of ``single_site``, ``column`` or ``parallel``.

    The parallel matrix is the average of the OE and EO two-sweep products.
    """
    _check_size(chain)
    name = getattr(kind, "name", kind)
    p = chain.params
    n, H, S = p.n, p.cap, chain.size
    if name == "column":
        table = _law_table(p)
        return sum(_column_update_matrix(chain, i, table) for i in range(n)) / n
    if name == "parallel":
        table = _law_table(p)
        I = np.eye(S)
        odd = I.copy()
        even = I.copy()
        for i in range(n):
            K = _column_update_matrix(chain, i, table)
            if i % 2 == 0:
                odd = odd @ K
            else:
                even = even @ K
        return 0.5 * (odd @ even + even @ odd)
    if name != "single_site":
        raise ValueError(f"unknown kind {kind!r}")
    P = np.zeros((S, S))
    q = p.q
    rows = np.arange(S)
    for i in range(n):
        if (i + 1) in p.pinned:
            continue
        base = (H + 1) ** i
        h = chain.states[:, i]
        a, b = _neighbour_ab(chain, i)
        p_down = np.where(h > a, 0.25, 0.25 * q)
        p_up = np.where(h < b, 0.25, 0.25 * q)
        down = chain.lookup[chain.codes - base * (h > 0)]
        up = chain.lookup[chain.codes + base * (h < H)]
        np.add.at(P, (rows, down), p_down / n)
        np.add.at(P, (rows, up), p_up / n)
    P[rows, rows] += 1.0 - P.sum(axis=1)
    return P


def stationary_residual(P: np.ndarray, mu: np.ndarray) -> float:
    return float(np.abs(mu @ P - mu).max())


def detailed_balance_residual(P: np.ndarray, mu: np.ndarray) -> float:
    flow = mu[:, None] * P
    return float(np.abs(flow - flow.T).max())


def tv_curve(chain: ExactChain, P: np.ndarray, start: np.ndarray, t_max: int) -> np.ndarray:
    """Total variation distance to the Gibbs law at t = 0..t_max from distribution ``start``."""
    nu = np.asarray(start, dtype=np.float64)
    if nu.shape != (chain.size,) or np.any(nu < 0) or abs(nu.sum() - 1) > 1e-9:
        raise ValueError("start must be a probability vector over the states")
    mu = chain.stationary
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = 0.5 * np.abs(nu - mu).sum()
        nu = nu @ P
    return out


def tau(chain: ExactChain, P: np.ndarray, eps: float, t_max: int = 10 ** 6) -> int:
    """First t with TV <= eps from both extreme starts (enough, by monotonicity)."""
    p = chain.params
    worst = 0
    for start in (p.top(), p.bottom()):
        nu = chain.point_mass(start)
        mu = chain.stationary
        t = 0
        while 0.5 * np.abs(nu - mu).sum() > eps:
            nu = nu @ P
            t += 1
            if t > t_max:
                raise RuntimeError(f"TV did not reach {eps} within {t_max} steps")
        worst = max(worst, t)
    return worst


def spectral_gap_exact(P: np.ndarray, stationary: np.ndarray, tol: float = 1e-10) -> float:
    """``1 - lambda_2`` of a reversible chain, via the symmetrised matrix."""
    mu = np.asarray(stationary)
    if detailed_balance_residual(P, mu) > tol:
        raise ValueError("matrix is not reversible with respect to the given vector")
    if P.shape[0] == 1:
        return 1.0
    s = np.sqrt(mu)
    A = s[:, None] * P / s[None, :]
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(1.0 - eig[-2])


# ---------------------------------------------------------------------------
# exhaustive checks of the column-mean closed forms


def closed_form_mismatch(params: ModelParams) -> float:
    """Largest relative gap between the closed-form and direct-sum column means, a <= b <= cap."""
    H = params.cap
    if H is None:
        raise ValidationError("closed-form sweep needs bounded heights")
    worst = 0.0
    for a in range(H + 1):
        for b in range(a, H + 1):
            direct = conditional_mean_direct(a, b, params)
            worst = max(worst, abs(conditional_mean(a, b, params) - direct) / max(abs(direct), 1e-300))
    return worst


def _pair_tables(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    H = params.cap
    eps = np.full((H + 1, H + 1), np.nan)
    mean = np.full((H + 1, H + 1), np.nan)
    for a in range(H + 1):
        for b in range(a, H + 1):
            mean[a, b] = conditional_mean(a, b, params)
            if a + b <= H:
                eps[a, b] = epsilon(a, b, params)
    return eps, mean


def _quadruples(H: int):
    a, b, c, d = np.meshgrid(*(np.arange(H + 1),) * 4, indexing="ij", sparse=True)
    nested = (c <= np.minimum(a, d)) & (np.maximum(a, d) <= b)
    return a, b, c, d, nested


def epsilon_monotonicity_violations(params: ModelParams, rel_tol: float = 1e-12) -> int:
    """Count pairs with ``c <= min(a,d) <= max(a,d) <= b`` (both sums <= cap) where eps(a,b) > eps(c,d)."""
    H = params.cap
    if H is None:
        raise ValidationError("exhaustive sweep needs bounded heights")
    eps, _ = _pair_tables(params)
    a, b, c, d, nested = _quadruples(H)
    mask = nested & (a + b <= H) & (c + d <= H)
    e_ab = eps[a, b]
    e_cd = eps[c, d]
    bad = mask & (e_ab > e_cd * (1 + rel_tol))
    return int(bad.sum())


def sandwich_violations(params: ModelParams, tol: float = 1e-12) -> int:
    """Count ordered neighbour pairs where the mean gap leaves ``[0, (aU+bU)/2 - (cL+dL)/2]``.

    The upper contour sees ``(aU, bU)`` and the lower one ``(cL, dL)``; every
    barrier case is covered because the means use the reflected form when
    ``a + b > cap``.
    """
    H = params.cap
    if H is None:
        raise ValidationError("exhaustive sweep needs bounded heights")
    _, mean = _pair_tables(params)
    a, b, c, d, nested = _quadruples(H)
    ordered = nested & (c <= d) & (a <= b)
    diff = mean[a, b] - mean[c, d]
    bound = (a + b) / 2.0 - (c + d) / 2.0
    bad = ordered & ((diff < -tol) | (diff > bound + tol))
    return int(bad.sum())


def write_stationary_csv(chain: ExactChain, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["state_index", "heights", "mass"])
    for k, (h, m) in enumerate(zip(chain.states, chain.stationary)):
        writer.writerow([k, " ".join(str(int(x)) for x in h), repr(float(m))])


def write_tv_csv(curve: np.ndarray, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "tv"])
    for t, v in enumerate(curve):
        writer.writerow([t, repr(float(v))])
