"""Migration planning: the greedy baseline and the repacking pipeline.

Both planners read a live ``Cluster`` without touching it and return a
``MigrationPlan``.  The engine applies plans wave by wave.

The repacking pipeline narrows each round to a small model:

* only MPs at or near their cap (by expected peak) give up calls;
* mice calls, young calls and calls moved last round stay put;
* cold MPs join as targets, fullest first, until their spare room covers
  five times the overflow;
* every virtual cluster is solved separately with its share of the budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import Cluster, NEVER_MOVED
from .trace import InvalidConfig
from .repack import EPS, RepackModel, RepackSolution, RepackSolver, SolveStatus, BranchAndBound


@dataclass(frozen=True)
class GreedyMigrationConfig:
    hot_threshold_pct: float = 75.0
    period_s: int = 120

    def validate(self) -> None:
        if not 0 < self.hot_threshold_pct <= 100:
            raise InvalidConfig("migration.greedy.hot_threshold_pct: must be in (0, 100]")


@dataclass(frozen=True)
class PlannerConfig:
    mice_pct: float = 2.0               # E
    near_hot_fraction: float = 0.95
    cold_room_multiplier: float = 5.0
    min_age_s: int = 180
    budget: int = 1000                  # L
    time_limit_s: float = 120.0
    gap: float = 0.10
    period_s: int = 120
    node_limit: int = 20_000
    # extend the 5 x T1 cold pool so large calls have somewhere to go
    room_for_every_call: bool = True

    def validate(self) -> None:
        def check(ok: bool, key: str, why: str) -> None:
            if not ok:
                raise InvalidConfig(f"migration.planner.{key}: {why}")

        check(self.mice_pct >= 0, "mice_pct", "must be >= 0")
        check(0 < self.near_hot_fraction <= 1, "near_hot_fraction", "must be in (0, 1]")
        check(self.cold_room_multiplier > 0, "cold_room_multiplier", "must be positive")
        check(self.min_age_s >= 0, "min_age_s", "must be >= 0")
        check(self.budget >= 0, "budget", "must be >= 0")
        check(self.time_limit_s > 0, "time_limit_s", "must be positive")
        check(0 <= self.gap < 1, "gap", "must be in [0, 1)")
        check(self.node_limit >= 1, "node_limit", "must be >= 1")


@dataclass(frozen=True)
class Move:
    call_id: str
    slot: int
    from_mp: int
    to_mp: int
    cpu_ref: float          # demand used for planning (reference SKU)
    age_s: int = 0
    prev_round: int = NEVER_MOVED


@dataclass
class MigrationPlan:
    moves: list[Move] = field(default_factory=list)
    waves: list[list[int]] = field(default_factory=list)   # indices into ``moves``
    deferred: list[Move] = field(default_factory=list)
    solves: list[tuple[int, RepackModel, RepackSolution, float]] = field(default_factory=list)
    round_idx: int = 0

    def __len__(self) -> int:
        return len(self.moves)

    def wave_moves(self) -> list[list[Move]]:
        return [[self.moves[i] for i in w] for w in self.waves]


# ---------------------------------------------------------------------------
# greedy baseline
# ---------------------------------------------------------------------------

def plan_greedy(cluster: Cluster, cfg: GreedyMigrationConfig, rng: np.random.Generator,
                now_s: int = 0) -> MigrationPlan:
    """Cool hot MPs by moving random calls to the first cold MP with room."""
    t = cfg.hot_threshold_pct
    cpu = cluster.cpu_pct().copy()
    ratio = cluster.ratio
    hot = np.flatnonzero(cpu >= t)
    if len(hot) == 0:
        return MigrationPlan()
    # MPs hot at the start never receive, even once cooled, so every move is hot to cold
    target_ok = cpu < t
    hot = hot[np.lexsort((hot, -cpu[hot]))]
    active = cluster.active_slots()
    by_mp = _group(active, cluster.host[active])
    moves = []
    for src in hot:
        calls = by_mp.get(int(src), np.zeros(0, np.int64))
        for s in calls[rng.permutation(len(calls))]:
            if cpu[src] < t:
                break
            ref = cluster.call_cpu_ref[s]
            fits = (cpu + ref * ratio < t) & target_ok
            if not fits.any():
                continue
            dst = int(np.argmax(fits))
            cpu[src] -= ref * ratio[src]
            cpu[dst] += ref * ratio[dst]
            moves.append(Move(cluster.call_id(s), int(s), int(src), dst, float(ref),
                              int(now_s - cluster.call_start[s]), int(cluster.last_round[s])))
    return MigrationPlan(moves, [list(range(len(moves)))] if moves else [])


def _group(slots: np.ndarray, keys: np.ndarray) -> dict[int, np.ndarray]:
    order = np.lexsort((slots, keys))
    slots, keys = slots[order], keys[order]
    cut = np.flatnonzero(np.diff(keys)) + 1
    return {int(k[0]): s for k, s in zip(np.split(keys, cut), np.split(slots, cut)) if len(k)}


# ---------------------------------------------------------------------------
# repacking pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidates:
    calls: np.ndarray       # call slots
    mps: np.ndarray         # MP ids: hot and near-hot first (ascending id), then chosen cold MPs
    B: np.ndarray           # stationary load per MP in ``mps``
    overflow: float         # T1

    def __len__(self) -> int:
        return len(self.calls)


def select_candidates(cluster: Cluster, cfg: PlannerConfig, now_s: int, round_idx: int,
                      virtual_cluster: int | None = None) -> Candidates:
    exp = cluster.expected_peak_pct()
    cap = cluster.cap
    in_scope = np.ones(cluster.n_mps, bool) if virtual_cluster is None \
        else cluster.virtual_cluster == virtual_cluster
    warm = in_scope & (exp >= cfg.near_hot_fraction * cap)
    empty = Candidates(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), 0.0)
    if not warm.any():
        return empty
    hot = in_scope & (exp >= cap)
    if hot.any():
        overflow = float((exp[hot] - cap[hot]).sum())
    else:
        # only near-hot MPs: size the cold pool by their distance above the near-hot line
        overflow = float((exp[warm] - cfg.near_hot_fraction * cap[warm]).sum())

    active = cluster.active_slots()
    host = cluster.host[active]
    est = cluster.call_est_ref[active] * cluster.ratio[host]
    movable = (warm[host] & (est > cfg.mice_pct)
               & (now_s - cluster.call_start[active] >= cfg.min_age_s)
               & (cluster.last_round[active] != round_idx - 1))
    calls = active[movable]
    if len(calls) == 0:
        return empty

    cold = np.flatnonzero(in_scope & ~warm)
    cold = cold[np.lexsort((cold, -exp[cold]))]
    room = np.cumsum(cap[cold] - exp[cold])
    need = cfg.cold_room_multiplier * overflow
    n_cold = min(int(np.searchsorted(room, need - EPS)) + 1, len(cold))
    if cfg.room_for_every_call:
        cold = _add_targets_for_large_calls(cluster, calls, cold, n_cold, exp)
    else:
        cold = cold[:n_cold]
    mps = np.concatenate([np.flatnonzero(warm), cold])
    cand_load = np.bincount(cluster.host[calls], cluster.call_est_ref[calls] * cluster.ratio[cluster.host[calls]],
                            minlength=cluster.n_mps)
    B = np.maximum(exp[mps] - cand_load[mps], 0.0)
    return Candidates(calls, mps, B, overflow)


def _add_targets_for_large_calls(cluster: Cluster, calls: np.ndarray, cold: np.ndarray,
                                 n_cold: int, exp: np.ndarray) -> np.ndarray:
    """Extend the cold pool so every candidate has at least one cold MP it fits on.

    ``cold`` is sorted fullest first and its first ``n_cold`` entries are
    already selected.  Calls are visited largest first; one that fits on
    no selected MP (after earlier calls reserved room) pulls in the fullest
    remaining cold MP that can take it.  A call too big for every cold MP
    reserves the emptiest one, where the solver may park it alone.
    """
    room = cluster.cap[cold] - exp[cold]
    chosen = np.zeros(len(cold), bool)
    chosen[:n_cold] = True
    demand = cluster.call_est_ref[calls]
    for s in calls[np.lexsort((calls, -demand))]:
        need = cluster.call_est_ref[s] * cluster.ratio[cold]
        fits = room >= need
        ok = fits & chosen
        if ok.any():
            j = int(np.flatnonzero(ok)[np.argmax((room - need)[ok])])
        elif fits.any():
            j = int(np.flatnonzero(fits)[0])
            chosen[j] = True
        else:
            # fits nowhere: offer the emptiest cold MP as a place to sit alone
            if len(room) == 0 or room.max() <= 0:
                continue
            j = int(np.argmax(room))
            chosen[j] = True
        room[j] -= need[j]
    return cold[chosen]


def build_repack_model(cands: Candidates, cluster: Cluster, budget: int) -> RepackModel:
    pos = {int(m): i for i, m in enumerate(cands.mps)}
    orig = np.array([pos[int(cluster.host[s])] for s in cands.calls], dtype=np.int64)
    return RepackModel(cands.mps.astype(np.int64), cands.calls.astype(np.int64),
                       cluster.call_est_ref[cands.calls].astype(float), cands.B.astype(float),
                       cluster.ratio[cands.mps].astype(float), cluster.cap[cands.mps].astype(float),
                       orig, int(budget))


def split_budget(budget: int, parts: int) -> list[int]:
    """Share ``budget`` moves among ``parts`` solves so the total never exceeds it."""
    base, extra = divmod(budget, parts)
    return [base + (i < extra) for i in range(parts)]


def plan_by_virtual_clusters(cluster: Cluster, cfg: PlannerConfig, now_s: int, round_idx: int,
                             solver: RepackSolver | None = None,
                             clock=None) -> MigrationPlan:
    """Solve each virtual cluster on its own and merge the plans wave by wave."""
    import time

    solver = solver or BranchAndBound(node_limit=cfg.node_limit)
    clock = clock or time.perf_counter
    n = cluster.cfg.n_virtual_clusters
    budgets = split_budget(cfg.budget, n)
    plan = MigrationPlan(round_idx=round_idx)
    for v in range(n):
        cands = select_candidates(cluster, cfg, now_s, round_idx, v if n > 1 else None)
        if len(cands) == 0:
            continue
        model = build_repack_model(cands, cluster, budgets[v])
        t0 = clock()
        sol = solver.solve(model, cfg.time_limit_s, cfg.gap)
        sol = straighten_chains(model, sol)
        plan.solves.append((v, model, sol, clock() - t0))
        waves, deferred = schedule_waves(model, sol)
        for k, wave in enumerate(waves):
            if k >= len(plan.waves):
                plan.waves.append([])
            plan.waves[k].extend(range(len(plan.moves), len(plan.moves) + len(wave)))
            plan.moves.extend(_move(cluster, model, sol, c, now_s) for c in wave)
        plan.deferred.extend(_move(cluster, model, sol, c, now_s) for c in deferred)
    return plan


def _move(cluster: Cluster, model: RepackModel, sol: RepackSolution, c: int, now_s: int) -> Move:
    s = int(model.call_ids[c])
    return Move(cluster.call_id(s), s, int(model.mp_ids[model.orig[c]]),
                int(model.mp_ids[sol.assign[c]]), float(model.P[c]),
                int(now_s - cluster.call_start[s]), int(cluster.last_round[s]))


def solve_repack_round(cluster: Cluster, cfg: PlannerConfig, now_s: int, round_idx: int,
                       solver: RepackSolver | None = None) -> MigrationPlan:
    """A single global solve over the whole cluster (no virtual clusters)."""
    solver = solver or BranchAndBound(node_limit=cfg.node_limit)
    cands = select_candidates(cluster, cfg, now_s, round_idx, None)
    plan = MigrationPlan(round_idx=round_idx)
    if len(cands) == 0:
        return plan
    model = build_repack_model(cands, cluster, cfg.budget)
    sol = solver.solve(model, cfg.time_limit_s, cfg.gap)
    sol = straighten_chains(model, sol)
    plan.solves.append((0, model, sol, 0.0))
    waves, deferred = schedule_waves(model, sol)
    for wave in waves:
        plan.waves.append(list(range(len(plan.moves), len(plan.moves) + len(wave))))
        plan.moves.extend(_move(cluster, model, sol, c, now_s) for c in wave)
    plan.deferred.extend(_move(cluster, model, sol, c, now_s) for c in deferred)
    return plan


# ---------------------------------------------------------------------------
# execution order
# ---------------------------------------------------------------------------

def straighten_chains(model: RepackModel, sol: RepackSolution) -> RepackSolution:
    """Re-target moves whose destination is itself shedding calls.

    A move into an MP that also sends calls away usually has to wait for
    those departures, which adds a wave.  Such a move is sent instead to an
    MP that only receives, provided the new target stays under its cap and
    under the solution's ``y``.  Caps, ``y`` and the move count never get
    worse, so the result is as good a solution as the input.
    """
    assign = sol.assign.copy()
    moved = np.flatnonzero(assign != model.orig)
    if len(moved) == 0:
        return sol
    P, R = model.P, model.R
    load = model.loads(assign)
    limit = np.minimum(model.cap.astype(float), sol.y)
    sources = np.zeros(model.n_mps, dtype=bool)
    sources[model.orig[moved]] = True
    changed = False
    for c in sorted(moved, key=lambda x: (-P[x], x)):
        d = assign[c]
        if not sources[d]:
            continue
        room = limit - load - P[c] * R
        room[sources] = -np.inf
        t = int(np.argmax(room))
        if room[t] < -EPS:
            continue
        load[d] -= P[c] * R[d]
        load[t] += P[c] * R[t]
        assign[c] = t
        changed = True
    if not changed:
        return sol
    return replace(sol, assign=assign, y=float(load.max()))


def schedule_waves(model: RepackModel, sol: RepackSolution) -> tuple[list[list[int]], list[int]]:
    """Order a solution's moves into waves that never overfill a target.

    Each wave admits pending moves largest first, as long as the target's
    load plus everything already admitted into it for this wave stays under
    its cap.  Departures from the same wave are not credited, so any order
    of execution inside a wave is safe.  When nothing can be admitted the
    pending moves contain a cycle (A waits for B waits for A); the move with
    the smallest demand on that cycle is dropped from the plan and the call
    stays where it is until a later round.

    Returns ``(waves, deferred)`` as lists of call positions in the model.
    For relaxed solutions the caps used here are raised to the solution's
    own final loads, since those already exceed the true caps.
    """
    moves = [int(c) for c in sol.moves(model)]
    if not moves:
        return [], []
    P, R = model.P, model.R
    load = model.loads(model.orig).astype(float)
    cap = model.cap.astype(float)
    if sol.status is SolveStatus.INFEASIBLE_RELAXED:
        cap = np.maximum(cap, np.maximum(load, model.loads(sol.assign)))
    src = {c: int(model.orig[c]) for c in moves}
    dst = {c: int(sol.assign[c]) for c in moves}
    pending = set(moves)
    waves, deferred = [], []
    while pending:
        arriving = load.copy()
        ready = []
        for c in sorted(pending, key=lambda x: (-P[x], x)):
            d = dst[c]
            if arriving[d] + P[c] * R[d] <= cap[d] + EPS:
                arriving[d] += P[c] * R[d]
                ready.append(c)
        if ready:
            for c in ready:
                load[src[c]] -= P[c] * R[src[c]]
                load[dst[c]] += P[c] * R[dst[c]]
            pending.difference_update(ready)
            waves.append(sorted(ready))
            continue
        victim = _cycle_victim(pending, src, dst, P)
        pending.discard(victim)
        deferred.append(victim)
    return waves, sorted(deferred)


def _cycle_victim(pending: set[int], src: dict, dst: dict, P: np.ndarray) -> int:
    """Pick the move to drop when every pending move waits on another."""
    out_of: dict[int, list[int]] = {}
    for c in sorted(pending):
        out_of.setdefault(src[c], []).append(c)
    seen: dict[int, int] = {}
    path: list[int] = []
    c = min(pending)
    while c not in seen:
        seen[c] = len(path)
        path.append(c)
        nxt = out_of.get(dst[c])
        if not nxt:
            # the target is blocked but has nothing left to send away
            into = [x for x in pending if dst[x] == dst[c]]
            return min(into, key=lambda x: (P[x], x))
        c = nxt[0]
    cycle = path[seen[c]:]
    return min(cycle, key=lambda x: (P[x], x))


def replay_waves(model: RepackModel, waves: list[list[int]], assign: np.ndarray) -> float:
    """Largest load above cap seen at any wave boundary (0 when always within caps).

    Only MPs that receive calls are checked, since sources only shed load.
    """
    load = model.loads(model.orig).astype(float)
    worst = 0.0
    for wave in waves:
        for c in wave:
            load[model.orig[c]] -= model.P[c] * model.R[model.orig[c]]
            load[assign[c]] += model.P[c] * model.R[assign[c]]
        targets = np.unique([assign[c] for c in wave])
        if len(targets):
            worst = max(worst, float((load[targets] - model.cap[targets]).max()))
    return max(worst, 0.0)


# ---------------------------------------------------------------------------
# independent checks
# ---------------------------------------------------------------------------

def check_solution(model: RepackModel, X: np.ndarray, y: float, relaxed: bool,
                   tol: float = 1e-6) -> list[str]:
    """Re-derive every model constraint from ``X`` alone; returns violations."""
    problems = []
    M, C = model.n_mps, model.n_calls
    X = np.asarray(X)
    if X.shape != (M, C):
        return [f"X has shape {X.shape}, expected {(M, C)}"]
    if not np.isin(X, (0, 1)).all():
        problems.append("X is not binary")
    per_call = X.sum(axis=0)
    for c in np.flatnonzero(per_call != 1):
        problems.append(f"(a) call {c} placed {per_call[c]} times")
    loads = model.B.astype(float).copy()
    for m in range(M):
        for c in range(C):
            if X[m, c]:
                loads[m] += model.P[c] * model.R[m]
    if not relaxed:
        for m in np.flatnonzero(loads > model.cap + tol):
            problems.append(f"(b) MP {m} load {loads[m]:.6g} above cap {model.cap[m]:.6g}")
    O = np.zeros((M, C), dtype=np.int64)
    O[model.orig, np.arange(C)] = 1
    moved = int(((O - X) * O).sum())
    if moved > model.L:
        problems.append(f"(c) {moved} moves exceed budget {model.L}")
    if M and abs(y - loads.max()) > tol * max(1.0, abs(y)):
        problems.append(f"(d) y={y:.9g} but busiest MP carries {loads.max():.9g}")
    return problems
