"""Live cluster state: MPs, hosted calls and the recurring-series store.

State is array-backed.  Every MP-level sum (current CPU, expected peak,
participants) is kept in reference-SKU units; the per-MP ratio is applied
when a value is read.  The engine's compiled event loop mutates the same
arrays directly, while the methods here are the checked entry points used
by tests, the planner and interactive work.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .cpu_model import REFERENCE_SKU, SkuProfile
from .trace import InvalidConfig

UNASSIGNED = -1
NEVER_MOVED = -(1 << 30)


class UnknownCall(KeyError):
    pass


class UnknownMp(KeyError):
    pass


class CallNotActive(RuntimeError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    n_mps: int = 3000
    hot_threshold_pct: float = 75.0
    cap_pct: float = 75.0
    # (sku, weight) pairs; MPs draw their hardware class from this mix
    sku_mix: tuple[tuple[SkuProfile, float], ...] = ((REFERENCE_SKU, 1.0),)
    n_virtual_clusters: int = 4

    def validate(self) -> None:
        if self.n_mps < 1:
            raise InvalidConfig("cluster.n_mps: must be at least 1")
        if not 0 < self.hot_threshold_pct <= 100:
            raise InvalidConfig("cluster.hot_threshold_pct: must be in (0, 100]")
        if not self.cap_pct > 0:
            raise InvalidConfig("cluster.cap_pct: must be positive")
        if self.n_virtual_clusters < 1:
            raise InvalidConfig("cluster.n_virtual_clusters: must be at least 1")
        if not self.sku_mix or any(w < 0 for _, w in self.sku_mix) \
                or sum(w for _, w in self.sku_mix) <= 0:
            raise InvalidConfig("cluster.sku: weights must be non-negative with a positive sum")


@dataclass(frozen=True)
class MpState:
    mp_id: int
    sku: SkuProfile
    cap_pct: float
    virtual_cluster_idx: int
    hosted_calls: frozenset[str]
    current_cpu_pct: float
    expected_peak_cpu_pct: float


@dataclass(frozen=True)
class CallState:
    call_id: str
    series_id: str | None
    start_s: int
    participants: int
    send_mbps: float
    age_s: int
    current_cpu_pct: float
    estimated_peak_cpu_pct: float
    assigned_mp: int | None
    last_migration_round: int | None
    is_recurring_predicted: bool


class Cluster:
    """MPs plus a fixed pool of call slots.

    Call slots are registered up front (the engine registers the whole
    report day) and become active when assigned to an MP.
    """

    def __init__(self, cfg: ClusterConfig, sku_idx: np.ndarray, virtual_cluster: np.ndarray):
        self.cfg = cfg
        self.skus = tuple(s for s, _ in cfg.sku_mix)
        self.sku_idx = np.asarray(sku_idx, dtype=np.int64)
        self.ratio = np.array([s.perf_ratio for s in self.skus])[self.sku_idx]
        self.cap = np.full(cfg.n_mps, float(cfg.cap_pct))
        self.virtual_cluster = np.asarray(virtual_cluster, dtype=np.int64)
        m = cfg.n_mps
        # reference-SKU sums per MP
        self.mp_cpu_ref = np.zeros(m)
        self.mp_exp_ref = np.zeros(m)
        self.mp_parts = np.zeros(m, dtype=np.int64)
        self.mp_ncalls = np.zeros(m, dtype=np.int64)
        self._ids: list[str] = []
        self._series: list[str | None] = []
        self._slot: dict[str, int] = {}
        self._grow(0)

    # -- slot storage ------------------------------------------------------
    def _grow(self, n: int) -> None:
        def extend(arr, fill, dtype):
            return np.concatenate([arr, np.full(n, fill, dtype=dtype)])
        if not hasattr(self, "host"):
            self.host = np.zeros(0, np.int64)
            self.call_start = np.zeros(0, np.int64)
            self.call_parts = np.zeros(0, np.int64)
            self.call_send = np.zeros(0)
            self.call_cpu_ref = np.zeros(0)
            self.call_pred_ref = np.zeros(0)
            self.call_est_ref = np.zeros(0)
            self.call_recurring = np.zeros(0, bool)
            self.last_round = np.zeros(0, np.int64)
        self.host = extend(self.host, UNASSIGNED, np.int64)
        self.call_start = extend(self.call_start, 0, np.int64)
        self.call_parts = extend(self.call_parts, 0, np.int64)
        self.call_send = extend(self.call_send, 0.0, float)
        self.call_cpu_ref = extend(self.call_cpu_ref, 0.0, float)
        self.call_pred_ref = extend(self.call_pred_ref, 0.0, float)
        self.call_est_ref = extend(self.call_est_ref, 0.0, float)
        self.call_recurring = extend(self.call_recurring, False, bool)
        self.last_round = extend(self.last_round, NEVER_MOVED, np.int64)

    def register_calls(self, call_ids, series_ids=None, start_s=None) -> np.ndarray:
        """Create inactive slots; returns their indices."""
        call_ids = list(call_ids)
        first = len(self._ids)
        for i, cid in enumerate(call_ids):
            if cid in self._slot:
                raise ValueError(f"call {cid!r} already registered")
            self._slot[cid] = first + i
        self._ids += call_ids
        self._series += list(series_ids) if series_ids is not None else [None] * len(call_ids)
        self._grow(len(call_ids))
        if start_s is not None:
            self.call_start[first:] = start_s
        return np.arange(first, len(self._ids))

    def slot(self, call_id: str) -> int:
        try:
            return self._slot[call_id]
        except KeyError:
            raise UnknownCall(call_id) from None

    def call_id(self, slot: int) -> str:
        return self._ids[slot]

    @property
    def n_mps(self) -> int:
        return self.cfg.n_mps

    # -- checked mutations ---------------------------------------------------
    def _check_mp(self, mp_id: int) -> int:
        if not 0 <= mp_id < self.n_mps:
            raise UnknownMp(mp_id)
        return int(mp_id)

    def _active_slot(self, call_id: str) -> int:
        s = self.slot(call_id)
        if self.host[s] == UNASSIGNED:
            raise CallNotActive(call_id)
        return s

    def assign_call(self, call_id: str, mp_id: int) -> None:
        s = self.slot(call_id)
        m = self._check_mp(mp_id)
        if self.host[s] != UNASSIGNED:
            raise ValueError(f"call {call_id!r} is already on MP {self.host[s]}")
        self.host[s] = m
        self._add(s, m, 1)

    def remove_call(self, call_id: str) -> None:
        s = self._active_slot(call_id)
        self._add(s, self.host[s], -1)
        self.host[s] = UNASSIGNED

    def move_call(self, call_id: str, to_mp: int, round_idx: int) -> None:
        s = self._active_slot(call_id)
        self.move_slot(s, self._check_mp(to_mp), round_idx)

    def move_slot(self, s: int, to_mp: int, round_idx: int) -> None:
        """Unchecked move by slot, for the engine's hot path."""
        self._add(s, self.host[s], -1)
        self.host[s] = to_mp
        self._add(s, to_mp, 1)
        self.last_round[s] = round_idx

    def update_call(self, call_id: str, participants: int | None = None,
                    send_mbps: float | None = None, cpu_ref: float | None = None,
                    pred_ref: float | None = None) -> None:
        """Change a call's live state; MP sums follow if the call is hosted."""
        s = self.slot(call_id)
        m = self.host[s]
        if m != UNASSIGNED:
            self._add(s, m, -1)
        if participants is not None:
            self.call_parts[s] = participants
        if send_mbps is not None:
            self.call_send[s] = send_mbps
        if cpu_ref is not None:
            self.call_cpu_ref[s] = cpu_ref
        if pred_ref is not None:
            self.call_pred_ref[s] = pred_ref
        self.call_est_ref[s] = max(self.call_pred_ref[s], self.call_cpu_ref[s])
        if m != UNASSIGNED:
            self._add(s, m, 1)

    def _add(self, s: int, m: int, sign: int) -> None:
        self.mp_cpu_ref[m] += sign * self.call_cpu_ref[s]
        self.mp_exp_ref[m] += sign * self.call_est_ref[s]
        self.mp_parts[m] += sign * self.call_parts[s]
        self.mp_ncalls[m] += sign

    def recompute_sums(self) -> None:
        """Rebuild every MP sum from the hosted calls (removes float drift)."""
        on = self.host >= 0
        h = self.host[on]
        m = self.n_mps
        self.mp_cpu_ref[:] = np.bincount(h, self.call_cpu_ref[on], minlength=m)
        self.mp_exp_ref[:] = np.bincount(h, self.call_est_ref[on], minlength=m)
        self.mp_parts[:] = np.bincount(h, self.call_parts[on], minlength=m).astype(np.int64)
        self.mp_ncalls[:] = np.bincount(h, minlength=m)

    # -- views ---------------------------------------------------------------
    def cpu_pct(self) -> np.ndarray:
        """Measured CPU per MP on its own hardware."""
        return self.mp_cpu_ref * self.ratio

    def expected_peak_pct(self) -> np.ndarray:
        return self.mp_exp_ref * self.ratio

    def hosted(self, mp_id: int) -> np.ndarray:
        return np.flatnonzero(self.host == self._check_mp(mp_id))

    def mp_state(self, mp_id: int) -> MpState:
        m = self._check_mp(mp_id)
        return MpState(m, self.skus[self.sku_idx[m]], float(self.cap[m]),
                       int(self.virtual_cluster[m]),
                       frozenset(self._ids[s] for s in self.hosted(m)),
                       float(self.mp_cpu_ref[m] * self.ratio[m]),
                       float(self.mp_exp_ref[m] * self.ratio[m]))

    def call_state(self, call_id: str, now_s: int = 0) -> CallState:
        s = self.slot(call_id)
        m = int(self.host[s])
        r = self.ratio[m] if m >= 0 else 1.0
        last = int(self.last_round[s])
        return CallState(call_id, self._series[s], int(self.call_start[s]),
                         int(self.call_parts[s]), float(self.call_send[s]),
                         max(0, now_s - int(self.call_start[s])),
                         float(self.call_cpu_ref[s] * r), float(self.call_est_ref[s] * r),
                         None if m < 0 else m, None if last == NEVER_MOVED else last,
                         bool(self.call_recurring[s]))

    def active_slots(self) -> np.ndarray:
        return np.flatnonzero(self.host >= 0)


def new_cluster(cfg: ClusterConfig, seed: int) -> Cluster:
    cfg.validate()
    rng = np.random.default_rng([seed, 0x5eed])
    vc = rng.integers(0, cfg.n_virtual_clusters, cfg.n_mps)
    w = np.array([wt for _, wt in cfg.sku_mix], dtype=float)
    sku = rng.choice(len(w), size=cfg.n_mps, p=w / w.sum()) if len(w) > 1 \
        else np.zeros(cfg.n_mps, np.int64)
    return Cluster(cfg, sku, vc)


# ---------------------------------------------------------------------------
# recurring-series store
# ---------------------------------------------------------------------------

KINDS = ("audio", "video", "ss")


@dataclass(frozen=True)
class OccurrenceSummary:
    """What one finished occurrence of a series looked like at its peak."""

    peak_participants: int
    # per-kind peak number of concurrent streams and peak send rate (Mbps)
    media_streams: tuple[int, int, int] = (0, 0, 0)
    media_mbps: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_json(self) -> dict:
        return {"peak_participants": self.peak_participants,
                "media_streams": dict(zip(KINDS, self.media_streams)),
                "media_mbps": dict(zip(KINDS, self.media_mbps))}

    @classmethod
    def from_json(cls, obj: dict) -> "OccurrenceSummary":
        return cls(int(obj["peak_participants"]),
                   tuple(int(obj["media_streams"][k]) for k in KINDS),
                   tuple(float(obj["media_mbps"][k]) for k in KINDS))


@dataclass
class SeriesStore:
    """Per-series occurrence history, oldest first, keeping the latest ``retention``.

    Backed by fixed-width numpy buffers so a day with hundreds of thousands
    of series stays compact; vectorized readers use ``peaks``/``streams``/
    ``mbps``/``count`` directly.
    """

    retention: int = 10
    _index: dict[str, int] = field(default_factory=dict)
    peaks: np.ndarray = field(default_factory=lambda: np.zeros((0, 10), np.int64))
    streams: np.ndarray = field(default_factory=lambda: np.zeros((0, 10, 3), np.int64))
    mbps: np.ndarray = field(default_factory=lambda: np.zeros((0, 10, 3)))
    count: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self) -> None:
        r = self.retention
        if self.peaks.shape[1] != r:
            self.peaks = np.zeros((0, r), np.int64)
            self.streams = np.zeros((0, r, 3), np.int64)
            self.mbps = np.zeros((0, r, 3))

    def series_index(self, series_id: str, create: bool = False) -> int:
        i = self._index.get(series_id, -1)
        if i < 0 and create:
            i = self._index[series_id] = len(self._index)
            if i >= len(self.count):
                self._reserve(max(16, 2 * len(self.count)))
        return i

    def _reserve(self, n: int) -> None:
        extra = n - len(self.count)
        r = self.retention
        self.peaks = np.concatenate([self.peaks, np.zeros((extra, r), np.int64)])
        self.streams = np.concatenate([self.streams, np.zeros((extra, r, 3), np.int64)])
        self.mbps = np.concatenate([self.mbps, np.zeros((extra, r, 3))])
        self.count = np.concatenate([self.count, np.zeros(extra, np.int64)])

    def record(self, series_id: str, occ: OccurrenceSummary) -> None:
        i = self.series_index(series_id, create=True)
        self._push(np.array([i]), np.array([occ.peak_participants]),
                   np.array([occ.media_streams]), np.array([occ.media_mbps], dtype=float))

    def record_many(self, series_ids, peaks, streams, mbps) -> None:
        """Append one occurrence per entry, in order (repeats allowed)."""
        idx = np.array([self.series_index(s, create=True) for s in series_ids], dtype=np.int64)
        self._push(idx, np.asarray(peaks), np.asarray(streams), np.asarray(mbps, dtype=float))

    def _push(self, idx, peaks, streams, mbps) -> None:
        r = self.retention
        # split into batches where every series appears at most once
        while len(idx):
            _, first = np.unique(idx, return_index=True)
            take = np.zeros(len(idx), bool)
            take[first] = True
            i = idx[take]
            full = self.count[i] >= r
            fi = i[full]
            self.peaks[fi, :-1] = self.peaks[fi, 1:]
            self.streams[fi, :-1] = self.streams[fi, 1:]
            self.mbps[fi, :-1] = self.mbps[fi, 1:]
            pos = np.minimum(self.count[i], r - 1)
            self.peaks[i, pos] = peaks[take]
            self.streams[i, pos] = streams[take]
            self.mbps[i, pos] = mbps[take]
            self.count[i] = np.minimum(self.count[i] + 1, r)
            idx, peaks, streams, mbps = idx[~take], peaks[~take], streams[~take], mbps[~take]

    def history(self, series_id: str) -> list[OccurrenceSummary]:
        i = self.series_index(series_id)
        if i < 0:
            return []
        return [OccurrenceSummary(int(self.peaks[i, j]),
                                  tuple(int(x) for x in self.streams[i, j]),
                                  tuple(float(x) for x in self.mbps[i, j]))
                for j in range(self.count[i])]

    def __len__(self) -> int:
        return len(self._index)

    def series(self) -> list[str]:
        return list(self._index)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SeriesStore):
            return NotImplemented
        return self.retention == other.retention and \
            sorted(self._index) == sorted(other._index) and \
            all(self.history(s) == other.history(s) for s in self._index)

    # snapshot file: {"retention": R, "series": {series_id: [occurrence, ...]}}
    def save(self, path: str | os.PathLike) -> None:
        doc = {"retention": self.retention,
               "series": {s: [o.to_json() for o in self.history(s)] for s in sorted(self._index)}}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True, separators=(",", ":"))
            f.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SeriesStore":
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        store = cls(retention=int(doc["retention"]))
        for s, occs in doc["series"].items():
            for o in occs:
                store.record(s, OccurrenceSummary.from_json(o))
        return store
