"""Trace replay: the simulated controller driving one cluster through a day.

Per second, trace events update call sizes and MP loads; each call's
first join asks the policy for an MP.  Every minute the peak estimates
are refreshed and a snapshot is taken.  Every planner period a
migration plan is computed; its first wave runs at once and later waves
follow one second apart.

The per-event work runs in a compiled loop (``_advance``) over flat
arrays owned by the ``Cluster``.  Everything that happens at most once a
minute stays in Python.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .cluster import Cluster, ClusterConfig, SeriesStore, new_cluster
from .cpu_model import CpuModelParams
from .metrics import RunReport, take_snapshot
from .migration import (GreedyMigrationConfig, MigrationPlan, PlannerConfig, plan_by_virtual_clusters,
                        plan_greedy)
from .policies import (RANK_EXPECTED, RANK_EXPECTED_IF_KNOWN, RANK_EXPECTED_IF_UNKNOWN, RR, PolicyKind,
                       choose, parse_policy)
from .predictors import (MIN_HISTORY, CallTrajectoryDataset, NmaxTable, avg_media_rate, build_nmax_table,
                         nmax_cpu_table, predict_recurring_many)
from .trace import CallTrace, InvalidConfig

MIGRATION_MODES = ("none", "greedy", "mip")


@dataclass(frozen=True)
class RunConfig:
    policy: PolicyKind = field(default_factory=lambda: parse_policy("llr"))
    migration: str = "none"
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    cpu: CpuModelParams = field(default_factory=CpuModelParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    greedy: GreedyMigrationConfig = field(default_factory=GreedyMigrationConfig)
    metrics_period_s: int = 60
    t_max_min: int = 120
    n_max_cap: int = 500
    training_days: int = 7
    avg_media_rate_mbps: float | None = None    # None: learned from the training calls
    seed: int = 0
    label: str = ""

    def validate(self) -> None:
        self.cluster.validate()
        self.planner.validate()
        self.greedy.validate()
        if self.migration not in MIGRATION_MODES:
            raise InvalidConfig(f"migration.mode: expected one of {', '.join(MIGRATION_MODES)}")
        if self.metrics_period_s != 60:
            # snapshots, estimate refreshes and planner rounds are all on the minute grid
            raise InvalidConfig("engine.metrics_period_s: only 60 is supported")
        for key, p in (("planner", self.planner.period_s), ("greedy", self.greedy.period_s)):
            if p <= 0 or p % 60:
                raise InvalidConfig(f"migration.{key}.period_s: must be a positive multiple of 60")
        if self.t_max_min < 0:
            raise InvalidConfig("predictors.t_max_min: must be >= 0")
        if self.n_max_cap < 1:
            raise InvalidConfig("predictors.n_max_cap: must be >= 1")
        if self.training_days < 1:
            raise InvalidConfig("predictors.training_days: must be >= 1")
        if self.avg_media_rate_mbps is not None and not self.avg_media_rate_mbps >= 0:
            raise InvalidConfig("predictors.avg_media_rate_mbps: must be non-negative")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return self.policy.name + ("" if self.migration == "none" else "+" + self.migration)


# ---------------------------------------------------------------------------
# trace preparation (shared by every run over the same trace)
# ---------------------------------------------------------------------------

@dataclass
class Replay:
    """A trace compiled for replay plus the predictor state trained on its history."""

    trace: CallTrace
    calls: np.ndarray           # trace indices of replayed calls (slot order)
    start: np.ndarray
    end: np.ndarray             # time of each call's last row
    series: list                # series id per slot (or None)
    rows_t: np.ndarray
    rows_slot: np.ndarray
    rows_dn: np.ndarray
    rows_ds: np.ndarray
    rows_first: np.ndarray
    rows_last: np.ndarray
    summary: tuple              # (peaks, streams, mbps) per slot for the series store
    history: SeriesStore
    table: NmaxTable | None
    rate_mbps: float
    day_start: int
    day_end: int


def prepare(trace: CallTrace, t_max_min: int = 120, n_max_cap: int = 500,
            training_days: int = 7) -> Replay:
    day_start = trace.report_start_s
    day_end = trace.duration_s
    calls = np.flatnonzero((trace.start_s >= day_start) & (trace.start_s < day_end))
    # call ids break ties between calls acting in the same second
    ids = np.array([trace.call_ids[i] for i in calls])
    rank = np.empty(len(calls), np.int64)
    rank[np.argsort(ids, kind="stable")] = np.arange(len(calls))
    local, t, dn, ds = trace.replay_rows(calls)
    n_rows = len(local)
    first = np.ones(n_rows, bool)
    last = np.ones(n_rows, bool)
    if n_rows:
        first[1:] = local[1:] != local[:-1]
        last[:-1] = local[1:] != local[:-1]
    order = np.lexsort((rank[local], t))
    local, t, dn, ds, first, last = (x[order] for x in (local, t, dn, ds, first, last))
    end = np.zeros(len(calls), np.int64)
    end[local[last]] = t[last]
    series = [trace.series_ids[i] for i in calls]
    peaks, streams, mbps, _ = trace.call_peaks(calls)

    # recurring history: earlier occurrences, oldest first
    past = trace.start_s < day_start
    has_series = np.array([s is not None for s in trace.series_ids], bool) if trace.n_calls \
        else np.zeros(0, bool)
    hist = np.flatnonzero(past & has_series)
    hist = hist[np.lexsort((hist, trace.start_s[hist]))]
    store = SeriesStore()
    if len(hist):
        h_peaks, h_streams, h_mbps, _ = trace.call_peaks(hist)
        store.record_many([trace.series_ids[i] for i in hist], h_peaks, h_streams, h_mbps)

    # non-recurring training window
    train = np.flatnonzero(past & ~has_series & (trace.start_s >= day_start - training_days * 86400))
    table, rate = None, 0.0
    if len(train):
        c_peak, _, _, c_send = trace.call_peaks(train)
        rate = avg_media_rate(c_send, c_peak)
        p = np.concatenate([trace.trajectories(chunk, t_max_min).astype(np.int16)
                            for chunk in np.array_split(train, max(1, len(train) // 50_000))])
        table = build_nmax_table(CallTrajectoryDataset(p, c_peak), n_max_cap)
    return Replay(trace, calls, trace.start_s[calls], end, series, t, local, dn, ds, first, last,
                  (peaks, streams, mbps), store, table, rate, day_start, day_end)


# ---------------------------------------------------------------------------
# compiled event loop
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _advance(i, t_stop, rt, rs, rdn, rds, rfirst, rlast,
             host, parts, send, cpu, pred, est, is_rec, known, start,
             mp_cpu, mp_exp, mp_parts, mp_ncalls, ratio, uniform_ratio, scratch,
             code, k, rank_mode, u, rr, nonrec, table_cpu, rate, base, per_mbps):
    n = len(rt)
    n_cap = table_cpu.shape[0] - 1
    while i < n and rt[i] < t_stop:
        s = rs[i]
        new_n = parts[s] + rdn[i]
        new_s = send[s] + rds[i]
        c = base + per_mbps * new_s * new_n if new_n > 0 else 0.0
        if rfirst[i]:
            if nonrec and not is_rec[s]:
                if new_n <= n_cap:
                    pred[s] = table_cpu[new_n, 0]
                else:
                    pred[s] = base + per_mbps * rate * new_n * new_n
            e = max(pred[s], c)
            if rank_mode == RANK_EXPECTED_IF_KNOWN:
                by_exp = known[s]
            elif rank_mode == RANK_EXPECTED_IF_UNKNOWN:
                by_exp = not known[s]
            else:
                by_exp = rank_mode == RANK_EXPECTED
            src = mp_exp if by_exp else mp_cpu
            if uniform_ratio:
                load = src
            else:
                for m in range(len(src)):
                    scratch[m] = src[m] * ratio[m]
                load = scratch
            h = choose(code, load, k, u[s, 0], u[s, 1], rr[0])
            if code == RR:
                rr[0] += 1
            host[s] = h
            mp_ncalls[h] += 1
            mp_parts[h] += new_n
            mp_cpu[h] += c
            mp_exp[h] += e
        else:
            h = host[s]
            e = max(pred[s], c)
            mp_cpu[h] += c - cpu[s]
            mp_exp[h] += e - est[s]
            mp_parts[h] += rdn[i]
        parts[s] = new_n
        send[s] = new_s
        cpu[s] = c
        est[s] = e
        if rlast[i]:
            mp_cpu[h] -= c
            mp_exp[h] -= e
            mp_parts[h] -= new_n
            mp_ncalls[h] -= 1
            host[s] = -1
        i += 1
    return i


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def oversized_floor(rp: Replay, cpu: CpuModelParams | None = None, hot_pct: float = 75.0) -> int:
    """Hot participant-minutes no placement can avoid.

    Counts, at every minute boundary, the participants of calls whose own
    CPU on a reference MP is at least ``hot_pct``.  Whatever MP hosts such a
    call is hot, so every configuration's H includes this amount.
    """
    cpu = cpu or CpuModelParams()
    n = len(rp.calls)
    parts = np.zeros(n, np.int64)
    send = np.zeros(n)
    total, i = 0, 0
    for minute in range((rp.day_end - rp.day_start) // 60):
        j = int(np.searchsorted(rp.rows_t, rp.day_start + 60 * (minute + 1), side="left"))
        slots = rp.rows_slot[i:j]
        parts += np.bincount(slots, rp.rows_dn[i:j], minlength=n).astype(np.int64)
        send += np.bincount(slots, rp.rows_ds[i:j], minlength=n)
        i = j
        big = (parts > 0) & (cpu.base_pct_per_call + cpu.pct_per_mbps * send * parts >= hot_pct)
        total += int(parts[big].sum())
    return total


@dataclass
class RunResult:
    report: RunReport
    plans: list[MigrationPlan]
    cluster: Cluster
    store: SeriesStore


def run(cfg: RunConfig, trace: CallTrace | Replay, keep_plans: bool = False) -> RunResult:
    """Replay one day of ``trace`` under ``cfg``."""
    cfg.validate()
    rp = trace if isinstance(trace, Replay) else prepare(trace, cfg.t_max_min, cfg.n_max_cap,
                                                         cfg.training_days)
    n = len(rp.calls)
    cl = new_cluster(cfg.cluster, cfg.seed)
    cl.register_calls([rp.trace.call_ids[i] for i in rp.calls], rp.series, rp.start)
    policy = cfg.policy
    mip = cfg.migration == "mip"
    # the planner always works with predicted peaks
    use_rec = policy.use_recurring or mip
    use_non = (policy.use_nonrecurring or mip) and rp.table is not None
    base, per_mbps = cfg.cpu.base_pct_per_call, cfg.cpu.pct_per_mbps
    rate = rp.rate_mbps if cfg.avg_media_rate_mbps is None else cfg.avg_media_rate_mbps
    table_cpu = (nmax_cpu_table(rp.table, rate, cfg.cpu) if use_non
                 else np.zeros((1, 1)))
    store = _copy_store(rp.history)
    series_idx = np.array([store.series_index(s, create=True) if s is not None else -1
                           for s in rp.series], dtype=np.int64)

    u = np.random.default_rng([cfg.seed, 1]).random((n, 2))
    greedy_rng = np.random.default_rng([cfg.seed, 2])
    rr = np.zeros(1, np.int64)
    scratch = np.zeros(cl.n_mps)
    known = np.zeros(n, dtype=bool)   # series with enough history to predict
    uniform = bool(np.all(cl.ratio == 1.0))
    hot_t = cfg.cluster.hot_threshold_pct
    period = (cfg.planner.period_s if mip else cfg.greedy.period_s) if cfg.migration != "none" else 0

    report = RunReport([], cfg.name)
    plans: list[MigrationPlan] = []
    by_start = np.argsort(rp.start, kind="stable")
    by_end = np.argsort(rp.end, kind="stable")
    next_start = next_end = 0
    pending_waves: list[tuple[int, list, int]] = []
    i = 0
    n_minutes = (rp.day_end - rp.day_start) // 60
    round_idx = 0

    def arm_arrivals(hi: int) -> None:
        """Set recurring predictions for calls starting before ``hi`` not yet armed."""
        nonlocal next_start
        j = np.searchsorted(rp.start[by_start], hi, side="left")
        new = by_start[next_start:j]
        next_start = j
        if len(new):
            sidx = series_idx[new]
            rows = sidx[sidx >= 0]
            known[new[sidx >= 0][store.count[rows] >= MIN_HISTORY]] = True
        if use_rec and len(new):
            sidx = series_idx[new]
            has = sidx >= 0
            est = np.full(len(new), np.nan)
            if has.any():
                rows = sidx[has]
                est[has] = predict_recurring_many(store.peaks[rows], store.mbps[rows],
                                                  store.count[rows], cfg.cpu)
            ok = ~np.isnan(est)
            cl.call_recurring[new[ok]] = True
            cl.call_pred_ref[new[ok]] = est[ok]

    def record_finished(before: int) -> None:
        nonlocal next_end
        j = np.searchsorted(rp.end[by_end], before, side="left")
        done = by_end[next_end:j]
        next_end = j
        done = done[series_idx[done] >= 0]
        if len(done):
            store.record_many([rp.series[s] for s in done], rp.summary[0][done],
                              rp.summary[1][done], rp.summary[2][done])

    def refresh(now: int) -> None:
        act = cl.active_slots()
        if use_non and len(act):
            non = act[~cl.call_recurring[act]]
            n_now = cl.call_parts[non]
            age = np.minimum((now - cl.call_start[non]) // 60, table_cpu.shape[1] - 1)
            cap = table_cpu.shape[0] - 1
            inside = n_now <= cap
            cl.call_pred_ref[non] = np.where(
                inside, table_cpu[np.minimum(n_now, cap), age],
                base + per_mbps * rate * n_now.astype(float) ** 2)
        cl.call_est_ref[act] = np.maximum(cl.call_pred_ref[act], cl.call_cpu_ref[act])
        cl.recompute_sums()

    def advance(until: int) -> None:
        nonlocal i
        i = _advance(i, until, rp.rows_t, rp.rows_slot, rp.rows_dn, rp.rows_ds, rp.rows_first,
                     rp.rows_last, cl.host, cl.call_parts, cl.call_send, cl.call_cpu_ref,
                     cl.call_pred_ref, cl.call_est_ref, cl.call_recurring, known, cl.call_start,
                     cl.mp_cpu_ref, cl.mp_exp_ref, cl.mp_parts, cl.mp_ncalls, cl.ratio, uniform,
                     scratch, policy.code, policy.k, policy.rank_mode, u, rr, use_non,
                     table_cpu, rate, base, per_mbps)

    def apply_wave(moves, r) -> None:
        for mv in moves:
            if cl.host[mv.slot] == mv.from_mp:
                cl.move_slot(mv.slot, mv.to_mp, r)
                report.migrations += 1

    arm_arrivals(rp.day_start + 60)
    for minute in range(n_minutes):
        boundary = rp.day_start + 60 * (minute + 1)
        while pending_waves and pending_waves[0][0] < boundary:
            at, moves, r = pending_waves.pop(0)
            advance(at)
            apply_wave(moves, r)
        advance(boundary)
        record_finished(boundary)
        arm_arrivals(boundary + 60)
        refresh(boundary)
        report.snapshots.append(take_snapshot(minute, cl.cpu_pct(), cl.mp_ncalls, cl.mp_parts,
                                              hot_t, report.migrations))
        if period and (boundary - rp.day_start) % period == 0:
            round_idx += 1
            if mip:
                plan = plan_by_virtual_clusters(cl, cfg.planner, boundary, round_idx)
                for _, _, sol, secs in plan.solves:
                    report.status_counts[sol.status.value] = report.status_counts.get(sol.status.value, 0) + 1
                    report.solver_seconds.append(secs)
            else:
                plan = plan_greedy(cl, cfg.greedy, greedy_rng, boundary)
            plan.round_idx = round_idx
            report.planner_rounds += 1
            report.deferred_moves += len(plan.deferred)
            if plan.moves:
                report.wave_counts[len(plan.waves)] = report.wave_counts.get(len(plan.waves), 0) + 1
            waves = plan.wave_moves()
            if waves:
                apply_wave(waves[0], round_idx)
                pending_waves.extend((boundary + j, w, round_idx) for j, w in enumerate(waves[1:], 1))
            if keep_plans:
                plans.append(plan)
    return RunResult(report, plans, cl, store)


def _copy_store(src: SeriesStore) -> SeriesStore:
    dst = SeriesStore(retention=src.retention)
    dst._index = dict(src._index)
    dst.peaks, dst.streams, dst.mbps = src.peaks.copy(), src.streams.copy(), src.mbps.copy()
    dst.count = src.count.copy()
    return dst


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

COMPARE_COLUMNS = ("hot_participant_minutes", "hot_call_minutes", "hot_mp_minutes", "migrations",
                   "peak_hot_participants", "max_of_max_cpu", "max_of_p95_cpu", "max_of_avg_cpu",
                   "busiest_max_to_avg")


def compare(cfgs: list[RunConfig], trace: CallTrace | Replay) -> list[dict]:
    """Run every config on one trace; values are also given relative to the RR row (or the first)."""
    if not cfgs:
        return []
    first = cfgs[0]
    rp = trace if isinstance(trace, Replay) else prepare(trace, first.t_max_min, first.n_max_cap,
                                                         first.training_days)
    rows = []
    for cfg in cfgs:
        agg = run(cfg, rp).report.aggregates()
        rows.append({"config": cfg.name, **{c: agg.get(c, 0) for c in COMPARE_COLUMNS}})
    ref = next((r for r, c in zip(rows, cfgs) if c.policy.name == "rr" and c.migration == "none"),
               rows[0])
    for r in rows:
        for c in COMPARE_COLUMNS:
            r[c + "_vs_rr"] = (r[c] / ref[c]) if ref[c] else (1.0 if r[c] == ref[c] else float("inf"))
    return rows


def comparison_csv(rows: list[dict]) -> str:
    import csv
    import io

    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(round(v, 9)) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def dump_plans(plans: list[MigrationPlan], path: str | os.PathLike) -> None:
    """One JSON object per move: round, wave, call and endpoints."""
    with open(path, "w", encoding="utf-8") as f:
        for plan in plans:
            for w, moves in enumerate(plan.wave_moves()):
                for mv in moves:
                    f.write(json.dumps({"round": plan.round_idx, "wave": w, "call_id": mv.call_id,
                                        "from_mp": mv.from_mp, "to_mp": mv.to_mp}, sort_keys=True))
                    f.write("\n")
