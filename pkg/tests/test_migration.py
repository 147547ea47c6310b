import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callpack.cluster import ClusterConfig, new_cluster
from callpack.migration import (GreedyMigrationConfig, PlannerConfig, plan_by_virtual_clusters,
                                plan_greedy, replay_waves, schedule_waves, select_candidates,
                                solve_repack_round, split_budget, straighten_chains)
from callpack.repack import BranchAndBound, RepackModel, RepackSolution, SolveStatus

NOW = 3600


def build(mps, n_vc=1, young=()):
    """``mps[m]`` lists the CPU of each call on MP m; calls named m<m>c<i>."""
    cl = new_cluster(ClusterConfig(n_mps=len(mps), n_virtual_clusters=n_vc), seed=0)
    for m, calls in enumerate(mps):
        for i, cpu in enumerate(calls):
            cid = f"m{m}c{i}"
            start = NOW - 60 if cid in young else 0
            cl.register_calls([cid], start_s=start)
            cl.update_call(cid, participants=3, cpu_ref=cpu, pred_ref=cpu)
            cl.assign_call(cid, m)
    return cl


# -- greedy baseline -----------------------------------------------------------------

def test_greedy_no_hot_mps():
    plan = plan_greedy(build([[30], [40]]), GreedyMigrationConfig(), np.random.default_rng(0))
    assert len(plan) == 0 and plan.waves == []


def test_greedy_moves_one_call_off_hot_mp():
    cl = build([[70, 10], [30]])
    plan = plan_greedy(cl, GreedyMigrationConfig(), np.random.default_rng(0))
    assert len(plan) == 1
    (mv,) = plan.moves
    assert (mv.from_mp, mv.to_mp) == (0, 1)
    assert len(plan.waves) == 1


def test_greedy_uses_first_fit_by_id():
    cl = build([[60, 20], [70], [10], [0.5]])
    plan = plan_greedy(cl, GreedyMigrationConfig(), np.random.default_rng(0))
    # MP 1 would end at 90 or 80, so whichever call leaves goes to MP 2
    assert {m.to_mp for m in plan.moves} == {2}


@pytest.mark.parametrize("seed", range(50))
def test_greedy_replay_oracle(seed):
    rng = np.random.default_rng(seed)
    mps = [list(rng.uniform(1, 30, rng.integers(0, 6))) for _ in range(int(rng.integers(2, 12)))]
    cl = build(mps)
    before = cl.cpu_pct().copy()
    plan = plan_greedy(cl, GreedyMigrationConfig(), rng)
    after = before.copy()
    for mv in plan.moves:
        after[mv.from_mp] -= mv.cpu_ref
        after[mv.to_mp] += mv.cpu_ref
    sources = {mv.from_mp for mv in plan.moves}
    targets = {mv.to_mp for mv in plan.moves}
    assert all(before[s] >= 75 for s in sources)
    assert all(after[s] <= before[s] + 1e-9 for s in sources)
    assert all(after[t] < 75 for t in targets)
    assert not sources & targets          # single wave: hot to cold only
    assert len({mv.call_id for mv in plan.moves}) == len(plan)


# -- candidate selection ----------------------------------------------------------------

def test_no_warm_mps_means_no_candidates():
    cands = select_candidates(build([[30], [50]]), PlannerConfig(), NOW, 5)
    assert len(cands) == 0 and len(cands.mps) == 0


def test_hot_mp_candidates_and_overflow():
    # 85% in total: the 53.5% call is too young, 1.5% is a mouse
    cl = build([[20, 1.5, 10, 53.5], [10]], young={"m0c3"})
    cands = select_candidates(cl, PlannerConfig(), NOW, 5)
    names = sorted(cl.call_id(s) for s in cands.calls)
    assert names == ["m0c0", "m0c2"]
    assert cands.overflow == pytest.approx(10.0)
    assert cands.B[0] == pytest.approx(55.0)


def test_cold_pool_taken_fullest_first_until_five_times_overflow():
    # cold frees 40, 30, 20, 10 -> fullest first gives 10, 20, 30 = 60 >= 50
    cl = build([[20, 10, 55], [35], [45], [55], [65]])
    cfg = PlannerConfig(room_for_every_call=False)
    cands = select_candidates(cl, cfg, NOW, 5)
    assert cands.overflow == pytest.approx(10.0)
    assert cands.mps.tolist() == [0, 4, 3, 2]


def test_cold_pool_grows_for_a_call_nothing_selected_can_take():
    # the 33% call fits only on the emptiest cold MP, which the 5 x T1 rule skips
    cl = build([[33, 10, 40], [0], [60], [60], [60], [60], [60]])
    narrow = select_candidates(cl, PlannerConfig(room_for_every_call=False), NOW, 5)
    wide = select_candidates(cl, PlannerConfig(), NOW, 5)
    assert 1 not in narrow.mps.tolist()
    assert 1 in wide.mps.tolist()


def test_oversized_call_reserves_the_emptiest_cold_mp():
    # the 80% call fits on no MP; the emptiest cold MP (id 5) joins the pool for it
    cl = build([[80, 5], [60], [60], [60], [60], [10]])
    narrow = select_candidates(cl, PlannerConfig(room_for_every_call=False), NOW, 5)
    wide = select_candidates(cl, PlannerConfig(), NOW, 5)
    assert 5 not in narrow.mps.tolist()
    assert 5 in wide.mps.tolist()


def test_filters_drop_mice_young_and_just_moved():
    cl = build([[1.9, 30, 30, 20]], young={"m0c2"})
    cl.last_round[cl.slot("m0c3")] = 4
    cands = select_candidates(cl, PlannerConfig(), NOW, 5)
    assert [cl.call_id(s) for s in cands.calls] == ["m0c1"]
    # two rounds later the moved call is eligible again
    cands = select_candidates(cl, PlannerConfig(), NOW, 6)
    assert sorted(cl.call_id(s) for s in cands.calls) == ["m0c1", "m0c3"]


def test_split_budget():
    assert split_budget(1000, 4) == [250] * 4
    assert split_budget(10, 4) == [3, 3, 2, 2]
    assert sum(split_budget(7, 3)) == 7


# -- waves -------------------------------------------------------------------------

def chain_model():
    # MP0 hot; A (40) must go to MP1, which first sends B (30) to MP2
    P = np.array([40.0, 30.0])
    B = np.array([50.0, 30.0, 40.0])
    return RepackModel(np.arange(3), np.arange(2), P, B, np.ones(3), np.full(3, 75.0),
                       np.array([0, 1]), 10)


def test_two_level_chain():
    m = chain_model()
    sol = RepackSolution(np.array([1, 2]), 70.0, SolveStatus.OPTIMAL)
    waves, deferred = schedule_waves(m, sol)
    assert waves == [[1], [0]]
    assert deferred == []
    assert replay_waves(m, waves, sol.assign) == 0.0


def test_cold_targets_form_one_wave():
    m = RepackModel(np.arange(3), np.arange(2), np.array([10.0, 20.0]), np.array([60.0, 0.0, 0.0]),
                    np.ones(3), np.full(3, 75.0), np.array([0, 0]), 10)
    sol = RepackSolution(np.array([1, 2]), 60.0, SolveStatus.OPTIMAL)
    assert schedule_waves(m, sol) == ([[0, 1]], [])


def test_swap_cycle_is_dropped_while_free_moves_proceed():
    # A (0 -> 1) and B (1 -> 0) each wait for the other; C (0 -> 2) is free
    m = RepackModel(np.arange(3), np.arange(3), np.array([40.0, 30.0, 5.0]),
                    np.array([30.0, 30.0, 0.0]), np.ones(3), np.full(3, 75.0),
                    np.array([0, 1, 0]), 10)
    sol = RepackSolution(np.array([1, 0, 2]), 70.0, SolveStatus.OPTIMAL)
    waves, deferred = schedule_waves(m, sol)
    assert waves == [[2]]
    assert deferred == [0, 1]


def test_cycle_victim_is_the_smaller_move():
    from callpack.migration import _cycle_victim

    assert _cycle_victim({0, 1}, {0: 0, 1: 1}, {0: 1, 1: 0}, np.array([40.0, 30.0])) == 1


def test_straighten_keeps_quality_and_prefers_pure_receivers():
    m = chain_model()
    # a fourth MP with room makes the chain unnecessary
    m = RepackModel(np.arange(4), np.arange(2), m.P, np.r_[m.B, 20.0], np.ones(4), np.full(4, 75.0),
                    m.orig, 10)
    sol = RepackSolution(np.array([1, 2]), 70.0, SolveStatus.OPTIMAL)
    out = straighten_chains(m, sol)
    assert out.assign.tolist() == [3, 2]
    assert out.y <= sol.y
    assert len(schedule_waves(m, out)[0]) == 1


def random_feasible(rng):
    M, C = int(rng.integers(2, 7)), int(rng.integers(1, 10))
    P = rng.integers(1, 30, C).astype(float)
    B = rng.integers(0, 40, M).astype(float)
    orig = rng.integers(0, M, C)
    m = RepackModel(np.arange(M), np.arange(C), P, B, np.ones(M), np.full(M, 75.0), orig, C)
    return m, BranchAndBound(node_limit=5000).solve(m, gap=0.0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_feasible_plans_replay_within_caps(seed):
    m, sol = random_feasible(np.random.default_rng(seed))
    if sol.status is SolveStatus.INFEASIBLE_RELAXED:
        return
    waves, deferred = schedule_waves(m, sol)
    moved = sorted(c for w in waves for c in w) + deferred
    assert sorted(moved) == sorted(sol.moves(m).tolist())
    # deferred calls stay home
    final = sol.assign.copy()
    final[deferred] = m.orig[deferred]
    assert replay_waves(m, waves, final) == 0.0


# -- whole rounds ----------------------------------------------------------------------

def busy_cluster(n_vc, seed=0, n_mps=40):
    rng = np.random.default_rng(seed)
    mps = [list(rng.uniform(3, 20, rng.integers(1, 8))) for _ in range(n_mps)]
    return build(mps, n_vc=n_vc)


def test_single_virtual_cluster_equals_global_solve():
    a = plan_by_virtual_clusters(busy_cluster(1), PlannerConfig(), NOW, 3)
    b = solve_repack_round(busy_cluster(1), PlannerConfig(), NOW, 3)
    key = lambda p: [(mv.call_id, mv.from_mp, mv.to_mp) for mv in p.moves]
    assert key(a) == key(b) and a.waves == b.waves


def test_virtual_clusters_stay_isolated():
    cl = busy_cluster(4, seed=2)
    cl.virtual_cluster[:] = np.arange(cl.n_mps) % 4
    exp = cl.expected_peak_pct()
    # cool everything outside cluster 2 by dropping calls there
    for s in cl.active_slots():
        if cl.virtual_cluster[cl.host[s]] != 2:
            cl.remove_call(cl.call_id(s))
    assert (cl.expected_peak_pct()[cl.virtual_cluster == 2] == exp[cl.virtual_cluster == 2]).all()
    plan = plan_by_virtual_clusters(cl, PlannerConfig(), NOW, 3)
    assert len(plan) > 0
    for mv in plan.moves:
        assert cl.virtual_cluster[mv.from_mp] == 2 and cl.virtual_cluster[mv.to_mp] == 2


def test_merged_plan_counts_every_solve():
    cl = busy_cluster(4, seed=5, n_mps=80)
    plan = plan_by_virtual_clusters(cl, PlannerConfig(), NOW, 3)
    per_solve = sum(len(sol.moves(model)) for _, model, sol, _ in plan.solves)
    assert len(plan) + len(plan.deferred) == per_solve
    assert sorted(i for w in plan.waves for i in w) == list(range(len(plan)))
    assert len({mv.call_id for mv in plan.moves}) == len(plan)


def test_merged_waves_index_every_move_once(monkeypatch):
    import callpack.migration as mig

    def one_per_wave(model, sol):
        return [[int(c)] for c in sol.moves(model)], []

    monkeypatch.setattr(mig, "schedule_waves", one_per_wave)
    cl = busy_cluster(2, seed=5, n_mps=80)
    plan = plan_by_virtual_clusters(cl, PlannerConfig(), NOW, 3)
    assert len(plan.waves) > 1
    assert sorted(i for w in plan.waves for i in w) == list(range(len(plan)))
    # wave k holds the k-th move of each solve that has one
    per_solve = [[int(model.call_ids[c]) for c in sol.moves(model)] for _, model, sol, _ in plan.solves]
    for k, wave in enumerate(plan.wave_moves()):
        assert [mv.slot for mv in wave] == [s[k] for s in per_solve if len(s) > k]


def test_budget_caps_moves():
    cl = busy_cluster(1, seed=7)
    plan = solve_repack_round(cl, PlannerConfig(budget=2), NOW, 3)
    assert len(plan) + len(plan.deferred) <= 2


@pytest.mark.parametrize("kw,key", [({"gap": 1.5}, "migration.planner.gap"),
                                    ({"node_limit": 0}, "migration.planner.node_limit")])
def test_planner_config_names_key(kw, key):
    from callpack.trace import InvalidConfig

    with pytest.raises(InvalidConfig, match=key):
        PlannerConfig(**kw).validate()
