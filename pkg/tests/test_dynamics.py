import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosmix import kernels
from sosmix.dynamics import (
    CHUNK,
    CensorSchedule,
    ChainKind,
    DrawStream,
    UpdateDraw,
    advance,
    censored_run,
    col_step,
    epoch_constants,
    par_step,
    par_sweep,
    run_chain,
    ss_step,
    stream,
)
from sosmix.model import ModelParams, ValidationError

LN2 = math.log(2)


def test_streams_are_reproducible_and_distinct():
    a = stream(5, 0).random(4)
    assert np.array_equal(a, stream(5, 0).random(4))
    assert not np.array_equal(a, stream(5, 1).random(4))
    assert not np.array_equal(a, stream(6, 0).random(4))
    with pytest.raises(ValueError):
        stream(-1)


def test_drawstream_slicing_does_not_change_sequence():
    one = DrawStream(7, stream(3))
    p1, x1 = one.take(CHUNK + 100)
    two = DrawStream(7, stream(3))
    parts = [two.take(m) for m in (1, 999, CHUNK - 1000, 100)]
    assert np.array_equal(p1, np.concatenate([p for p, _ in parts]))
    assert np.array_equal(x1, np.concatenate([x for _, x in parts]))
    assert p1.min() >= 0 and p1.max() < 7


def test_chain_kind_parse_roundtrip():
    for text in ("single_site", "column", "parallel:EO", "parallel:OE", "pinned:4:column", "pinned:2:single_site"):
        assert str(ChainKind.parse(text)) == text
    with pytest.raises(ValueError):
        ChainKind.parse("glauber")
    with pytest.raises(ValueError):
        ChainKind("parallel", order="XY")


def test_update_draw_decoding():
    d = UpdateDraw.from_uniform(2, 0.1)
    assert d.direction == -1 and d.u == pytest.approx(0.2)
    d = UpdateDraw.from_uniform(2, 0.8)
    assert d.direction == 1 and d.u == pytest.approx(0.6)


def test_single_site_step_rules():
    p = ModelParams(1, LN2, cap=1)
    q = p.q
    # up from 0 leaves the interval [0, 0]: accepted iff u < q/2
    assert ss_step([0], UpdateDraw(1, +1, 0.99 * q / 2), p).tolist() == [1]
    assert ss_step([0], UpdateDraw(1, +1, 1.01 * q / 2), p).tolist() == [0]
    # down from 1 towards the interval: accepted iff u < 1/2
    assert ss_step([1], UpdateDraw(1, -1, 0.49), p).tolist() == [0]
    assert ss_step([1], UpdateDraw(1, -1, 0.51), p).tolist() == [1]
    # clamped at the floor and the cap
    assert ss_step([0], UpdateDraw(1, -1, 0.0), p).tolist() == [0]
    assert ss_step([1], UpdateDraw(1, +1, 0.0), p).tolist() == [1]
    with pytest.raises(ValidationError):
        ss_step([0], UpdateDraw(2, +1, 0.0), p)


def test_pinned_positions_never_move():
    p = ModelParams(4, 1.0, pinned={2, 4})
    h = np.array([3, 0, 2, 0])
    for v in np.linspace(0, 0.999, 50):
        for i in (2, 4):
            assert ss_step(h, UpdateDraw.from_uniform(i, v), p)[i - 1] == 0
            assert col_step(h, UpdateDraw(i, r=v), p)[i - 1] == 0


@settings(max_examples=150, deadline=None)
@given(n=st.integers(1, 6), beta=st.sampled_from([0.3, 1.0, 3.0]), seed=st.integers(0, 10 ** 6),
       mode=st.sampled_from(["bounded", "unbounded"]))
def test_compiled_loops_match_reference_steps(n, beta, seed, mode):
    p = ModelParams(n, beta, height_mode=mode, boundary_left=1)
    rng = np.random.default_rng(seed)
    h0 = rng.integers(0, n + 1, size=n)
    pos = rng.integers(0, n, size=200)
    x = rng.random(200)
    for kind, step in ((kernels.SINGLE_SITE, "ss"), (kernels.COLUMN, "col")):
        ref = h0.copy()
        for i, v in zip(pos, x):
            if step == "ss":
                ref = ss_step(ref, UpdateDraw.from_uniform(int(i) + 1, v), p)
            else:
                ref = col_step(ref, UpdateDraw(int(i) + 1, r=v), p)
        fast = h0.astype(np.int64).copy()
        kernels.run_draws(fast, kind, p.boundary_left, p.boundary_right, p.kernel_cap, p.q, p.pin_mask(), pos, x)
        assert np.array_equal(ref, fast)


def test_par_sweep_consumes_n_uniforms_and_updates_one_parity():
    p = ModelParams(5, 1.0)
    h = np.array([1, 2, 3, 2, 1])
    g1, g2 = stream(1), stream(1)
    out = par_sweep(h, "odd", g1, p)
    g2.random(5)
    assert g1.random() == g2.random()
    assert np.array_equal(out[1::2], h[1::2])
    out = par_sweep(h, "even", np.full(5, 0.5), p)
    assert np.array_equal(out[0::2], h[0::2])
    with pytest.raises(ValueError):
        par_sweep(h, "odd", np.zeros(3), p)
    with pytest.raises(ValueError):
        par_sweep(h, "left", np.zeros(5), p)


def test_par_step_matches_two_sweeps():
    p = ModelParams(6, 0.8)
    h = np.array([0, 2, 4, 4, 2, 0])
    r = stream(9).random(12)
    expect = par_sweep(par_sweep(h, "even", r[:6], p), "odd", r[6:], p)
    assert np.array_equal(par_step(h, "EO", stream(9), p), expect)


def test_run_chain_deterministic_and_records():
    p = ModelParams(8, 1.0)
    kind = ChainKind.parse("column")
    t1 = run_chain(kind, p.top(), 1000, 4, p, statistics=("mean_height", "max_height", "distance"), stride=100)
    t2 = run_chain(kind, p.top(), 1000, 4, p, statistics=("mean_height", "max_height", "distance"), stride=100)
    assert t1.records == t2.records
    s, v = t1.series("max_height")
    assert s.tolist() == list(range(0, 1001, 100))
    assert v[0] == 8
    buf = io.StringIO()
    t1.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "step,statistic,value"
    with pytest.raises(ValueError):
        run_chain(kind, p.top(), 10, 0, p, statistics=("energy",))


def test_run_chain_zero_steps_is_identity():
    p = ModelParams(4, 1.0)
    tr = run_chain(ChainKind.parse("single_site"), [1, 2, 1, 0], 0, 0, p)
    assert tr.final.tolist() == [1, 2, 1, 0]


def test_parallel_and_pinned_kinds_run():
    p = ModelParams(6, 1.0)
    tr = run_chain(ChainKind.parse("parallel:OE"), p.top(), 50, 1, p, stride=10)
    assert tr.final.max() <= 6
    tr = run_chain(ChainKind.parse("pinned:3:single_site"), np.zeros(6, dtype=int), 5000, 1, p)
    assert tr.final[2] == 0 and tr.final[5] == 0


def test_censored_schedule_only_touches_matching_parity():
    p = ModelParams(8, 1.0)
    sched = CensorSchedule.alternating(4, 500, first="odd", D=2)
    assert sched.patterns == ("odd", "even", "odd", "even")
    start = np.full(8, 4)
    res = censored_run(CensorSchedule(1, 2000, ("odd",), 1), start, 3, p)
    assert np.array_equal(res.final[1::2], start[1::2])
    res = censored_run(CensorSchedule(1, 2000, ("none",), 1), start, 3, p)
    assert np.array_equal(res.final, start) and res.applied == 0
    res = censored_run(sched, start, 3, p, threshold=1)
    assert res.in_b.shape == (2000,)
    assert res.in_b.all()  # boundary step 0 -> 4 is always >= 1
    with pytest.raises(ValueError):
        CensorSchedule(2, 10, ("odd",))
    with pytest.raises(ValueError):
        CensorSchedule(1, 10, ("diagonal",))
    assert CensorSchedule.log_inverse_probability(math.exp(-3.5)) == 4


def test_censored_run_from_conditioned_start():
    from sosmix.equilibrium import above

    p = ModelParams(6, 1.0)
    res = censored_run(CensorSchedule(1, 10, ("none",)), above(2), 0, p)
    assert res.final.min() >= 2


def test_epoch_constants():
    c = epoch_constants(16, 2)
    L = math.log(16)
    assert c["t"] == pytest.approx(c["M"] * c["m"])
    assert c["m"] == pytest.approx(2 * 16 * 4 * L ** 6)


def test_advance_equals_run_draws():
    p = ModelParams(5, 0.5)
    h = p.top()
    advance(h, ChainKind.parse("single_site"), 3000, DrawStream(5, stream(2)), p)
    g = p.top()
    pos, x = DrawStream(5, stream(2)).take(3000)
    kernels.run_draws(g, 0, 0, 0, 5, p.q, p.pin_mask(), pos, x)
    assert np.array_equal(h, g)
