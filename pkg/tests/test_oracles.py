import numpy as np

from _oracles import chi2_4sigma


def test_chi2_threshold_matches_normal_tail_at_large_df():
    # with many cells the statistic is nearly normal, so the cut is about 4 sd above the mean
    _, thr, _ = chi2_4sigma(np.full(2001, 100.0), np.full(2001, 100.0))
    assert 3.5 < (thr - 2000) / np.sqrt(4000) < 4.5


def test_chi2_small_df_threshold_is_the_4_sigma_tail():
    _, thr, _ = chi2_4sigma([50, 50], [50.0, 50.0])
    assert abs(thr - 16.0) < 1e-9


def test_chi2_detects_a_small_bias():
    rng = np.random.default_rng(0)
    law = np.array([0.5, 0.3, 0.2])
    biased = np.array([0.49, 0.31, 0.2])
    N = 10 ** 6
    assert chi2_4sigma(rng.multinomial(N, law), N * law)[2]
    assert not chi2_4sigma(rng.multinomial(N, biased), N * law)[2]


def test_chi2_pools_small_cells():
    stat, _, ok = chi2_4sigma([98, 1, 1], [98.0, 1.0, 1.0])
    assert ok and stat == 0.0
