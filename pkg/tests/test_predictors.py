from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callpack.cluster import OccurrenceSummary
from callpack.cpu_model import CpuModelParams, cpu_pct
from callpack.predictors import (WMA_WEIGHTS, CallTrajectoryDataset, EmptyDataset, NmaxTable,
                                 NotEnoughHistory, avg_media_rate, build_nmax_table,
                                 estimate_nonrecurring_peak_cpu, nmax_cpu_table,
                                 predict_recurring, predict_recurring_many)

from oracles import naive_nmax

PARAMS = CpuModelParams()


def hist(*peaks):
    """Oldest first, like SeriesStore.history."""
    return [OccurrenceSummary(p, (p, p, 0), (0.1 * p, 1.0 * p, 0.0)) for p in peaks]


# -- recurring -----------------------------------------------------------------

def test_weights_sum_to_one():
    assert sum(Fraction(w) for w in WMA_WEIGHTS) == 1


def test_constant_history():
    assert predict_recurring(hist(8, 8, 8, 8)).peak_participants == 8.0


def test_hand_evaluated_example():
    # newest first: 10, 8, 8, then 4 and 4 (mean 4) -> 0.5*10 + 0.25*8 + 0.125*8 + 0.125*4
    est = predict_recurring(hist(4, 4, 8, 8, 10))
    assert est.peak_participants == pytest.approx(8.5)


def test_three_occurrences_are_not_enough():
    assert predict_recurring(hist(3, 4, 5)) is NotEnoughHistory
    assert not NotEnoughHistory


def test_estimate_cpu_uses_cpu_model():
    est = predict_recurring(hist(6, 6, 6, 6))
    send = sum(est.media_mbps)
    assert est.peak_cpu_pct == pytest.approx(cpu_pct(6, send, PARAMS))


@settings(max_examples=1000)
@given(st.floats(0, 500, allow_nan=False), st.integers(4, 10))
def test_wma_fixed_point(h, length):
    occ = [OccurrenceSummary(0, (0, 0, 0), (h, h, h))] * length
    est = predict_recurring(occ)
    assert abs(est.media_mbps[1] - h) <= 1e-12 * max(1.0, h)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 60), min_size=0, max_size=10))
def test_vectorized_matches_scalar(peaks):
    h = hist(*peaks)
    r = 10
    P = np.zeros((1, r))
    M = np.zeros((1, r, 3))
    P[0, :len(peaks)] = peaks
    for i, o in enumerate(h):
        M[0, i] = o.media_mbps
    got = predict_recurring_many(P, M, np.array([len(peaks)]), PARAMS)[0]
    want = predict_recurring(h)
    if want is NotEnoughHistory:
        assert np.isnan(got)
    else:
        assert got == pytest.approx(want.peak_cpu_pct)


# -- N_max table ----------------------------------------------------------------

def test_toy_dataset_gives_25_over_6():
    p = np.full((3, 6), -1)
    p[:, 5] = [2, 3, 9]
    data = CallTrajectoryDataset(p, np.array([4, 6, 9]))
    table = build_nmax_table(data, n_max_cap=20)
    assert table.lookup(3, 5) == pytest.approx(25 / 6)
    assert naive_nmax([2, 3, 9], [4, 6, 9], 3) == pytest.approx(25 / 6)


def test_degenerate_mass_at_n():
    n = 4
    p = np.array([[1, 2, 4], [3, 4, 4]])
    table = build_nmax_table(CallTrajectoryDataset(p, np.array([n, n])), n_max_cap=10)
    assert table.lookup(n, 2) == n


def test_n_above_every_peak_maps_to_itself():
    p = np.array([[1, 2, 3]])
    table = build_nmax_table(CallTrajectoryDataset(p, np.array([3])), n_max_cap=10)
    assert table.lookup(7, 1) == 7
    assert table.lookup(40, 1) == 40       # beyond the table
    assert table.lookup(2, 999) == table.lookup(2, 2)   # t clamps


def test_empty_dataset_rejected():
    with pytest.raises(EmptyDataset):
        build_nmax_table(CallTrajectoryDataset(np.zeros((0, 3), int), np.zeros(0, int)))


def test_dataset_checks_peaks():
    with pytest.raises(ValueError):
        CallTrajectoryDataset(np.array([[5]]), np.array([3]))


def random_dataset(rng, n_calls, n_min=6, n_cap=30):
    c = rng.integers(1, n_cap + 10, n_calls)
    p = np.full((n_calls, n_min), -1)
    for x in range(n_calls):
        life = rng.integers(1, n_min + 1)
        p[x, :life] = np.minimum(np.maximum.accumulate(rng.integers(0, c[x] + 1, life)), c[x])
        if rng.random() < 0.5:
            p[x, rng.integers(0, life)] = c[x]
    return CallTrajectoryDataset(p, c)


@pytest.mark.parametrize("seed", range(50))
def test_table_equals_naive_double_loop(seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, int(rng.integers(1, 51)))
    cap = 30
    table = build_nmax_table(data, n_max_cap=cap)
    for t in range(data.p.shape[1]):
        col = data.p[:, t]
        for n in range(cap + 1):
            want = Fraction(naive_nmax_exact(col, data.c, n))
            assert table.values[n, t] == float(want), (n, t)


def naive_nmax_exact(p_t, c, n):
    num = den = 0
    for m in range(n, int(max(c)) + 1):
        w = sum(1 for px, cx in zip(p_t, c) if 0 <= px <= n and cx >= m)
        num += w * m
        den += w
    return Fraction(n) if den == 0 else Fraction(num, den)


def test_nmax_at_least_n_on_random_queries():
    rng = np.random.default_rng(11)
    data = random_dataset(rng, 400, n_min=20, n_cap=60)
    table = build_nmax_table(data, n_max_cap=80)
    n = rng.integers(0, 120, 10_000)
    t = rng.integers(0, 40, 10_000)
    assert (table.lookup(n, t) >= n).all()


def test_int16_trajectories_with_large_calls():
    # p * (cap + 2) overflows int16 once a call passes about 65 participants
    p = np.array([[300, 450], [2, 3]], dtype=np.int16)
    c = np.array([480, 3])
    table = build_nmax_table(CallTrajectoryDataset(p, c), n_max_cap=500)
    assert table.values[300, 0] == float(naive_nmax_exact(p[:, 0].astype(int), c, 300))
    assert table.values[2, 1] == float(naive_nmax_exact(p[:, 1].astype(int), c, 2))


def test_csv_round_trip(tmp_path):
    data = random_dataset(np.random.default_rng(1), 30)
    table = build_nmax_table(data, n_max_cap=12)
    table.to_csv(tmp_path / "t.csv")
    back = NmaxTable.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.values, table.values)


# -- non-recurring CPU ---------------------------------------------------------

def toy_table():
    p = np.full((3, 6), -1)
    p[:, 5] = [2, 3, 9]
    return build_nmax_table(CallTrajectoryDataset(p, np.array([4, 6, 9])), n_max_cap=20)


def test_toy_table_composed_with_cpu_model():
    got = estimate_nonrecurring_peak_cpu(3, 5 * 60, toy_table(), 1.0, PARAMS)
    n = 25 / 6
    assert got == pytest.approx(cpu_pct(n, 1.0 * n, PARAMS))


def test_degenerate_table_tracks_current_size():
    table = NmaxTable(np.tile(np.arange(11, dtype=float)[:, None], (1, 4)))
    got = estimate_nonrecurring_peak_cpu(6, 0, table, 0.8, PARAMS)
    assert got == pytest.approx(cpu_pct(6, 0.8 * 6, PARAMS))


def test_traffic_term_linear_in_rate():
    t = toy_table()
    base = PARAMS.base_pct_per_call
    a = estimate_nonrecurring_peak_cpu(3, 300, t, 1.0, PARAMS) - base
    b = estimate_nonrecurring_peak_cpu(3, 300, t, 2.0, PARAMS) - base
    assert b == pytest.approx(2 * a)


def test_sku_ratio_applies():
    t = toy_table()
    one = estimate_nonrecurring_peak_cpu(3, 300, t, 1.0, PARAMS)
    assert estimate_nonrecurring_peak_cpu(3, 300, t, 1.0, PARAMS, perf_ratio=1.5) == pytest.approx(1.5 * one)


def test_cpu_table_matches_scalar_estimator():
    t = toy_table()
    cpu = nmax_cpu_table(t, 1.3, PARAMS)
    for n in (0, 1, 3, 7):
        assert cpu[n, 5] == pytest.approx(estimate_nonrecurring_peak_cpu(n, 300, t, 1.3, PARAMS))


def test_avg_media_rate_is_mean_of_per_participant_rates():
    assert avg_media_rate(np.array([10.0, 3.0, 5.0]), np.array([5, 3, 0])) == pytest.approx(1.5)
    assert avg_media_rate(np.array([1.0]), np.array([0])) == 0.0
