import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from callpack.cluster import ClusterConfig, new_cluster
from callpack.policies import (EmptyCluster, Picker, k_smallest, parse_policy, pick_mp,
                               pick_mp_tetris)
from callpack.trace import InvalidConfig


def rng(seed=0):
    return np.random.default_rng(seed)


def test_ll_takes_argmin():
    assert pick_mp(parse_policy("ll"), np.array([10.0, 5.0, 7.0]), rng()) == 1


def test_ll_ties_go_to_lowest_id():
    assert pick_mp(parse_policy("ll"), np.array([3.0, 1.0, 1.0]), rng()) == 1


def test_llr_is_uniform_over_three():
    pol = parse_policy("llr", k=3)
    r = rng(42)
    load = np.array([5.0, 1.0, 9.0])
    picks = np.bincount([pick_mp(pol, load, r) for _ in range(10_000)], minlength=3)
    assert chisquare(picks).pvalue > 0.001


def test_llr_only_picks_among_k_smallest():
    pol = parse_policy("llr", k=2)
    load = np.array([9.0, 1.0, 8.0, 2.0, 7.0])
    got = {pick_mp(pol, load, rng(s)) for s in range(200)}
    assert got == {1, 3}


def test_p2_tie_goes_to_first_draw():
    pol = parse_policy("p2")
    for seed in range(20):
        r = rng(seed)
        u1 = np.random.default_rng(seed).random()
        first = min(int(u1 * 2), 1)
        assert pick_mp(pol, np.array([50.0, 50.0]), r) == first


def test_p2_prefers_lighter_of_two():
    pol = parse_policy("p2")
    # with two MPs both are always drawn, so the lighter one wins
    assert all(pick_mp(pol, np.array([60.0, 10.0]), rng(s)) == 1 for s in range(50))


def test_rr_rotates():
    p = Picker(parse_policy("rr"), rng())
    assert [p.pick(np.zeros(3)) for _ in range(7)] == [0, 1, 2, 0, 1, 2, 0]


def test_random_covers_every_mp():
    pol = parse_policy("random")
    r = rng(1)
    picks = np.bincount([pick_mp(pol, np.zeros(4), r) for _ in range(8000)], minlength=4)
    assert chisquare(picks).pvalue > 0.001


@pytest.mark.parametrize("name", ["rr", "random", "ll", "llr", "p2", "tetris"])
def test_empty_cluster(name):
    with pytest.raises(EmptyCluster):
        pick_mp(parse_policy(name), np.zeros(0), rng())


def test_bad_names_and_k():
    with pytest.raises(InvalidConfig, match="policies.name"):
        parse_policy("best")
    with pytest.raises(InvalidConfig, match="policies.k"):
        parse_policy("llr", k=0)


def test_tetris_k1_ranks_by_expected_peak_not_current_cpu():
    cl = new_cluster(ClusterConfig(n_mps=2), seed=0)
    cl.register_calls(["a", "b", "new"])
    cl.update_call("a", cpu_ref=1.0, pred_ref=30.0)
    cl.assign_call("a", 0)
    cl.update_call("b", cpu_ref=20.0, pred_ref=20.0)
    cl.assign_call("b", 1)
    assert pick_mp(parse_policy("ll"), cl.cpu_pct(), rng()) == 0
    m = pick_mp_tetris(cl, cl.slot("new"), 12.0, parse_policy("tetris", k=1), rng())
    assert m == 1
    assert cl.mp_state(1).expected_peak_cpu_pct == pytest.approx(32.0)


def test_tetris_on_empty_cluster_books_estimate():
    cl = new_cluster(ClusterConfig(n_mps=8), seed=0)
    cl.register_calls(["x"])
    m = pick_mp_tetris(cl, cl.slot("x"), 7.5, parse_policy("tetris"), rng(3))
    assert m in range(5)     # the five lowest ids tie at zero load
    assert cl.mp_state(m).expected_peak_cpu_pct == pytest.approx(7.5)


def test_same_seed_same_choices():
    load = np.linspace(0, 50, 40)
    for name in ("random", "llr", "p2"):
        pol = parse_policy(name)
        a, b = rng(8), rng(8)
        assert [pick_mp(pol, load, a) for _ in range(50)] == [pick_mp(pol, load, b) for _ in range(50)]


@settings(max_examples=300)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.integers(1, 8))
def test_k_smallest_matches_stable_sort(load, k):
    load = np.array(load, dtype=float)
    want = np.argsort(load, kind="stable")[:k]
    assert list(k_smallest(load, k)) == list(want)
