import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callpack.cluster import (CallNotActive, ClusterConfig, OccurrenceSummary, SeriesStore,
                              UnknownCall, UnknownMp, new_cluster)
from callpack.cpu_model import SkuProfile
from callpack.trace import InvalidConfig


def small(n_mps=4, **kw):
    return new_cluster(ClusterConfig(n_mps=n_mps, **kw), seed=7)


def test_virtual_cluster_indices_in_range():
    cl = small(4)
    assert ((cl.virtual_cluster >= 0) & (cl.virtual_cluster < 4)).all()


def test_virtual_cluster_sizes_are_binomial():
    cl = new_cluster(ClusterConfig(), seed=1)
    sizes = np.bincount(cl.virtual_cluster, minlength=4)
    sigma = np.sqrt(3000 * 0.25 * 0.75)
    assert (np.abs(sizes - 750) <= 3 * sigma).all()


def test_same_seed_same_map():
    a = new_cluster(ClusterConfig(n_mps=100), seed=3)
    b = new_cluster(ClusterConfig(n_mps=100), seed=3)
    assert (a.virtual_cluster == b.virtual_cluster).all()


def test_sku_mix_is_drawn_by_weight():
    mix = ((SkuProfile("a", 1.0), 1.0), (SkuProfile("b", 2.0), 3.0))
    cl = new_cluster(ClusterConfig(n_mps=4000, sku_mix=mix), seed=0)
    assert abs((cl.ratio == 2.0).mean() - 0.75) < 0.03


@pytest.mark.parametrize("kw,key", [({"n_mps": 0}, "cluster.n_mps"),
                                    ({"hot_threshold_pct": 120}, "cluster.hot_threshold_pct"),
                                    ({"n_virtual_clusters": 0}, "cluster.n_virtual_clusters")])
def test_bad_config_names_key(kw, key):
    with pytest.raises(InvalidConfig, match=key):
        new_cluster(ClusterConfig(**kw), seed=0)


def test_assign_then_remove_restores_mp():
    cl = small()
    cl.register_calls(["a", "b"])
    cl.assign_call("a", 1)
    before = cl.mp_state(2)
    cl.update_call("b", participants=3, cpu_ref=5.0, pred_ref=7.0)
    cl.assign_call("b", 2)
    assert cl.mp_state(2).expected_peak_cpu_pct == pytest.approx(7.0)
    cl.remove_call("b")
    assert cl.mp_state(2) == before


def test_move_updates_both_sides_and_round():
    cl = small()
    cl.register_calls(["a"])
    cl.update_call("a", participants=2, cpu_ref=3.0)
    cl.assign_call("a", 0)
    cl.move_call("a", 3, round_idx=9)
    assert "a" not in cl.mp_state(0).hosted_calls
    assert "a" in cl.mp_state(3).hosted_calls
    assert cl.call_state("a").last_migration_round == 9
    assert cl.mp_state(3).current_cpu_pct == pytest.approx(3.0)


def test_errors():
    cl = small()
    cl.register_calls(["a"])
    with pytest.raises(UnknownCall):
        cl.assign_call("zz", 0)
    with pytest.raises(UnknownMp):
        cl.assign_call("a", 99)
    with pytest.raises(CallNotActive):
        cl.remove_call("a")
    with pytest.raises(CallNotActive):
        cl.move_call("a", 1, 0)


def test_estimate_is_max_of_prediction_and_measurement():
    cl = small()
    cl.register_calls(["a"])
    cl.update_call("a", cpu_ref=4.0, pred_ref=2.0)
    assert cl.call_est_ref[cl.slot("a")] == 4.0
    cl.update_call("a", pred_ref=9.0)
    assert cl.call_est_ref[cl.slot("a")] == 9.0


def test_sku_ratio_applies_to_views():
    mix = ((SkuProfile("x", 2.0), 1.0),)
    cl = new_cluster(ClusterConfig(n_mps=2, sku_mix=mix), seed=0)
    cl.register_calls(["a"])
    cl.update_call("a", cpu_ref=10.0)
    cl.assign_call("a", 1)
    assert cl.cpu_pct()[1] == pytest.approx(20.0)
    assert cl.call_state("a").current_cpu_pct == pytest.approx(20.0)


ops = st.lists(st.tuples(st.sampled_from(["assign", "remove", "move", "update"]),
                         st.integers(0, 9), st.integers(0, 5),
                         st.floats(0, 50), st.floats(0, 50), st.integers(0, 30)),
               max_size=60)


@settings(max_examples=200, deadline=None)
@given(ops)
def test_sums_match_recomputation_after_every_op(seq):
    cl = small(6)
    ids = [f"c{i}" for i in range(10)]
    cl.register_calls(ids)
    for op, c, m, cpu, pred, parts in seq:
        cid = ids[c]
        active = cl.host[c] >= 0
        if op == "assign" and not active:
            cl.assign_call(cid, m)
        elif op == "remove" and active:
            cl.remove_call(cid)
        elif op == "move" and active:
            cl.move_call(cid, m, 1)
        elif op == "update":
            cl.update_call(cid, participants=parts, cpu_ref=cpu, pred_ref=pred)
        on = cl.host >= 0
        for mp in range(6):
            here = cl.host == mp
            assert cl.mp_exp_ref[mp] == pytest.approx(cl.call_est_ref[here].sum(), abs=1e-9)
            assert cl.mp_cpu_ref[mp] == pytest.approx(cl.call_cpu_ref[here].sum(), abs=1e-9)
            assert cl.mp_parts[mp] == cl.call_parts[here].sum()
        # every active call sits on exactly one MP
        assert cl.mp_ncalls.sum() == on.sum()
        assert sum(len(cl.mp_state(mp).hosted_calls) for mp in range(6)) == on.sum()


# -- series store -------------------------------------------------------------

def occ(n):
    return OccurrenceSummary(n, (n, n // 2, 0), (0.1 * n, 0.5 * n, 0.0))


def test_retention_keeps_last_ten():
    store = SeriesStore()
    for i in range(12):
        store.record("s", occ(i))
    hist = store.history("s")
    assert [h.peak_participants for h in hist] == list(range(2, 12))


def test_unknown_series_has_empty_history():
    assert SeriesStore().history("nope") == []


def test_snapshot_round_trip(tmp_path):
    store = SeriesStore()
    for i in range(14):
        store.record(f"s{i % 3}", occ(i))
    store.record("one", OccurrenceSummary(1))
    path = tmp_path / "series.json"
    store.save(path)
    back = SeriesStore.load(path)
    assert back == store
    assert back.history("s1") == store.history("s1")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(0, 40)), max_size=40))
def test_record_many_equals_one_by_one(items):
    one, many = SeriesStore(), SeriesStore()
    for s, n in items:
        one.record(s, occ(n))
    if items:
        sids = [s for s, _ in items]
        peaks = np.array([n for _, n in items])
        streams = np.array([occ(n).media_streams for _, n in items])
        mbps = np.array([occ(n).media_mbps for _, n in items])
        many.record_many(sids, peaks, streams, mbps)
    for s in "abc":
        assert one.history(s) == many.history(s)
