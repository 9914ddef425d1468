import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosmix.coupling import (
    CoupledPair,
    MeanTable,
    coalescence_time,
    default_t_max,
    drift_bound,
    exact_pair_drift,
    grand_step,
    write_coalescence_csv,
)
from sosmix.dynamics import DrawStream, UpdateDraw, stream
from sosmix.model import InvariantError, ModelParams, ValidationError
from sosmix.wilson import laplacian, weights

from _oracles import exhaustive_order_violations


@pytest.mark.parametrize("kind", ["single_site", "column"])
@pytest.mark.parametrize("beta", [0.3, math.log(2), 3.0])
def test_exhaustive_monotonicity_n2(kind, beta):
    assert exhaustive_order_violations(kind, ModelParams(2, beta)) == 0


def test_pair_requires_order():
    p = ModelParams(3, 1.0)
    with pytest.raises(InvariantError):
        CoupledPair([1, 0, 0], [0, 0, 0], p)
    pair = CoupledPair.extremes(p)
    assert pair.distance() == pytest.approx(3 * (1 + math.sqrt(2)))


def test_identical_pair_stays_identical():
    p = ModelParams(5, 1.0)
    h = np.array([1, 2, 2, 1, 0])
    pair = CoupledPair(h, h, p)
    ds = DrawStream(5, stream(0))
    pos, x = ds.take(500)
    for i, v in zip(pos, x):
        pair = grand_step(pair, UpdateDraw.from_uniform(int(i) + 1, v), "single_site")
        assert pair.coalesced
    assert coalescence_time("column", p, 0, lower=h, upper=h).steps == 0


def test_n1_column_coalesces_in_one_step():
    for beta in (0.3, 1.0, 3.0):
        r = coalescence_time("column", ModelParams(1, beta), 11)
        assert r.steps == 1 and not r.timed_out


def test_parallel_grand_step_and_coalescence():
    p = ModelParams(6, 1.0)
    pair = CoupledPair.extremes(p)
    rng = stream(2)
    for _ in range(200):
        pair = grand_step(pair, rng.random(12), "parallel:OE")
    r = coalescence_time("parallel", p, 3)
    assert not r.timed_out and r.steps >= 1
    with pytest.raises(ValueError):
        grand_step(pair, rng.random(5), "parallel")


@pytest.mark.parametrize("kind", ["single_site", "column"])
def test_random_coupled_runs_stay_ordered(kind):
    p = ModelParams(16, 1.0)
    pair = CoupledPair.extremes(p)
    ds = DrawStream(16, stream(5))
    pos, x = ds.take(20000)
    for i, v in zip(pos, x):
        d = UpdateDraw.from_uniform(int(i) + 1, v) if kind == "single_site" else UpdateDraw(int(i) + 1, r=v)
        pair = grand_step(pair, d, kind)  # raises on violation


def test_sandwiching_of_a_third_chain():
    """Coalescence of bottom and top forces every chain in between to agree with them."""
    from sosmix import kernels

    p = ModelParams(10, 1.0)
    res = coalescence_time("column", p, 17)
    lo, hi = p.bottom(), p.top()
    mid = stream(99).integers(0, 11, size=10)
    pos, x = DrawStream(10, stream(17)).take(res.steps)
    for h in (lo, hi, mid):
        kernels.run_draws(h, kernels.COLUMN, 0, 0, 10, p.q, p.pin_mask(), pos, x)
    assert np.array_equal(lo, hi) and np.array_equal(lo, mid)


def test_coalescence_is_deterministic_and_times_out():
    p = ModelParams(12, 1.0)
    a = coalescence_time("single_site", p, 4, replica=2)
    b = coalescence_time("single_site", p, 4, replica=2)
    assert a == b
    t = coalescence_time("single_site", p, 4, t_max=10)
    assert t.timed_out and t.steps == 10
    with pytest.raises(ValueError):
        coalescence_time("column", p, 0, t_max=0)
    with pytest.raises(ValidationError):
        coalescence_time("column", p, 0, lower=p.top(), upper=p.bottom())


def test_default_budgets():
    assert default_t_max("column", 16) == math.ceil(64 * 16 ** 3 * math.log(16))
    assert default_t_max("single_site", 16) == math.ceil(64 * 16 ** 3.5 * math.log(16))


def test_coalescence_csv():
    p = ModelParams(4, 1.0)
    rows = [coalescence_time("column", p, 7, replica=k) for k in range(3)]
    buf = io.StringIO()
    write_coalescence_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "kind,n,beta,seed,steps,timed_out"
    assert len(lines) == 4


def test_drift_identical_pair_is_zero():
    p = ModelParams(6, 1.0)
    h = np.array([0, 1, 3, 3, 1, 0])
    assert exact_pair_drift(CoupledPair(h, h, p)) == 0.0


def test_drift_large_beta_is_pure_laplacian():
    """With vanishing tails, the drift is the Laplacian of the gap profile against w."""
    n = 7
    p = ModelParams(n, 60.0)
    pair = CoupledPair.extremes(p)
    ww = weights(n)
    gap = (pair.upper - pair.lower).astype(float)
    ext = np.concatenate(([0.0], gap, [0.0]))
    lap_means = 0.5 * (ext[:-2] + ext[2:])
    expect = np.dot(ww.w, lap_means - gap) / n
    assert exact_pair_drift(pair, ww) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(-np.dot(ww.w, laplacian(gap)) / n)


def test_drift_uses_direct_sum_means():
    p = ModelParams(3, 0.7)
    lo, hi = np.array([0, 0, 1]), np.array([2, 3, 1])
    pair = CoupledPair(lo, hi, p)
    ww = weights(3)
    from sosmix.model import conditional_mean_direct as m

    def col_means(h):
        e = np.concatenate(([0], h, [0]))
        return np.array([m(min(e[i], e[i + 2]), max(e[i], e[i + 2]), p) for i in range(3)])

    expect = np.dot(ww.w, (col_means(hi) - hi) - (col_means(lo) - lo)) / 3
    assert exact_pair_drift(pair, ww) == pytest.approx(expect, rel=1e-13)


@settings(max_examples=150, deadline=None)
@given(n=st.integers(2, 12), beta=st.sampled_from([0.3, 1.0, 3.0]), seed=st.integers(0, 2 ** 32))
def test_drift_contracts(n, beta, seed):
    p = ModelParams(n, beta)
    rng = np.random.default_rng(seed)
    x, y = rng.integers(0, n + 1, size=(2, n))
    pair = CoupledPair(np.minimum(x, y), np.maximum(x, y), p)
    means = MeanTable(p)
    assert exact_pair_drift(pair, means=means) <= drift_bound(pair) + 1e-10


def test_drift_with_pins_still_contracts():
    p = ModelParams(9, 1.0).with_pins_every(3)
    rng = np.random.default_rng(1)
    means = MeanTable(p)
    for _ in range(200):
        x, y = rng.integers(0, 10, size=(2, 9)) * ~p.pin_mask()
        pair = CoupledPair(np.minimum(x, y), np.maximum(x, y), p)
        assert exact_pair_drift(pair, means=means) <= drift_bound(pair) + 1e-10
