"""Call traces: data model, JSON Lines I/O and a synthetic workload generator.

A trace is stored column-wise (one structured numpy array holding every
participant event, plus per-call columns) so that multi-million event
workloads fit in memory.  ``CallTrace.calls`` exposes the familiar
record-per-call view on demand.
"""

from __future__ import annotations

import gzip
import io
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numba
import numpy as np


class TraceError(Exception):
    pass


class MalformedLine(TraceError):
    def __init__(self, line_no: int, reason: str = ""):
        super().__init__(f"line {line_no}: {reason}" if reason else f"line {line_no}")
        self.line_no = line_no


class InvariantViolation(TraceError):
    def __init__(self, call_id: str, reason: str):
        super().__init__(f"call {call_id!r}: {reason}")
        self.call_id = call_id
        self.reason = reason


class InvalidConfig(ValueError):
    pass


class MediaKind(str, Enum):
    AUDIO = "audio"
    VIDEO = "video"
    SCREEN_SHARE = "ss"


class Action(str, Enum):
    JOIN = "join"
    LEAVE = "leave"
    MEDIA_START = "mstart"
    MEDIA_STOP = "mstop"
    MEDIA_QUALITY = "mqual"


# Integer codes used in the columnar store.  Within a second, events are
# ordered by action code, so joins precede media changes precede leaves.
JOIN, MSTART, MQUAL, MSTOP, LEAVE = 0, 1, 2, 3, 4
_ACTIONS = {JOIN: Action.JOIN, MSTART: Action.MEDIA_START, MQUAL: Action.MEDIA_QUALITY,
            MSTOP: Action.MEDIA_STOP, LEAVE: Action.LEAVE}
_ACTION_CODES = {a.value: c for c, a in _ACTIONS.items()}
AUDIO, VIDEO, SS = 0, 1, 2
NO_KIND = -1
_KINDS = {AUDIO: MediaKind.AUDIO, VIDEO: MediaKind.VIDEO, SS: MediaKind.SCREEN_SHARE}
_KIND_CODES = {k.value: c for c, k in _KINDS.items()}

EVENT_DTYPE = np.dtype([("t", "i4"), ("p", "i4"), ("a", "i1"), ("k", "i1"), ("mbps", "f8")])


@dataclass(frozen=True)
class ParticipantEvent:
    time_s: int
    participant_id: str
    action: Action
    kind: MediaKind | None = None
    mbps: float | None = None


@dataclass(frozen=True)
class CallRecord:
    call_id: str
    series_id: str | None
    start_s: int
    end_s: int
    events: tuple[ParticipantEvent, ...]

    @property
    def max_participants(self) -> int:
        n = peak = 0
        for ev in self.events:
            if ev.action is Action.JOIN:
                n += 1
                peak = max(peak, n)
            elif ev.action is Action.LEAVE:
                n -= 1
        return peak


class CallTrace:
    """A validated call trace held in columnar form.

    ``events`` is sorted by call (in ``call_ids`` order) and, within a call,
    by ``(t, action)``; ``offsets[i]:offsets[i+1]`` slices call ``i``.
    Participants are stored as per-call indices; ``participant_names[i]``
    maps them back to ids (``None`` means the default ``p<index>`` naming).
    Calls starting before ``report_start_s`` are history: they feed the
    predictors but are not replayed.
    """

    def __init__(self, duration_s: int, call_ids: Sequence[str], series_ids: Sequence[str | None],
                 start_s: np.ndarray, end_s: np.ndarray, events: np.ndarray, offsets: np.ndarray,
                 participant_names: Sequence[tuple[str, ...] | None] | None = None,
                 seed: int | None = None, report_start_s: int = 0):
        self.duration_s = int(duration_s)
        self.call_ids = list(call_ids)
        self.series_ids = list(series_ids)
        self.start_s = np.asarray(start_s, dtype=np.int64)
        self.end_s = np.asarray(end_s, dtype=np.int64)
        self.events = events
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.participant_names = (list(participant_names) if participant_names is not None
                                  else [None] * len(self.call_ids))
        self.seed = seed
        self.report_start_s = int(report_start_s)

    # -- record view -------------------------------------------------------
    @property
    def n_calls(self) -> int:
        return len(self.call_ids)

    @property
    def calls(self) -> "_CallView":
        return _CallView(self)

    def call_events(self, i: int) -> np.ndarray:
        return self.events[self.offsets[i]:self.offsets[i + 1]]

    def participant_name(self, i: int, p: int) -> str:
        names = self.participant_names[i]
        return names[p] if names is not None else f"p{p}"

    def record(self, i: int) -> CallRecord:
        evs = []
        for t, p, a, k, mbps in self.call_events(i).tolist():
            evs.append(ParticipantEvent(
                int(t), self.participant_name(i, p), _ACTIONS[a],
                _KINDS[k] if k != NO_KIND else None,
                float(mbps) if k != NO_KIND else None))
        return CallRecord(self.call_ids[i], self.series_ids[i], int(self.start_s[i]),
                          int(self.end_s[i]), tuple(evs))

    @classmethod
    def from_records(cls, records: Iterable[CallRecord], duration_s: int = 86400,
                     seed: int | None = None, report_start_s: int = 0) -> "CallTrace":
        call_ids, series_ids, starts, ends, names, offsets = [], [], [], [], [], [0]
        rows: list[tuple] = []
        for rec in records:
            pmap: dict[str, int] = {}
            call_rows = []
            for ev in rec.events:
                p = pmap.setdefault(ev.participant_id, len(pmap))
                k = _KIND_CODES[MediaKind(ev.kind).value] if ev.kind is not None else NO_KIND
                call_rows.append((ev.time_s, p, _ACTION_CODES[Action(ev.action).value], k,
                                  float(ev.mbps) if ev.mbps is not None else 0.0))
            rows.extend(_canonical_order(call_rows))
            call_ids.append(rec.call_id)
            series_ids.append(rec.series_id)
            starts.append(rec.start_s)
            ends.append(rec.end_s)
            default = all(name == f"p{i}" for name, i in pmap.items())
            names.append(None if default else tuple(pmap))
            offsets.append(len(rows))
        events = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
        trace = cls(duration_s, call_ids, series_ids, np.array(starts, np.int64),
                    np.array(ends, np.int64), events, np.array(offsets, np.int64),
                    names, seed, report_start_s)
        validate(trace)
        return trace

    # -- derived columns ---------------------------------------------------
    def call_index(self) -> np.ndarray:
        """Call index of every event row."""
        return np.repeat(np.arange(self.n_calls), np.diff(self.offsets))

    def max_participants(self) -> np.ndarray:
        """Peak concurrent participants per call."""
        if self.n_calls == 0:
            return np.zeros(0, dtype=np.int64)
        dn = _participant_delta(self.events["a"])
        count = _segment_cumsum(dn, self.offsets)
        out = np.zeros(self.n_calls, dtype=np.int64)
        nonempty = np.diff(self.offsets) > 0
        if len(count):
            out[nonempty] = np.maximum.reduceat(count, self.offsets[:-1][nonempty])
        return out

    def joiner_durations(self) -> np.ndarray:
        """Last join minus first join per call (0 for calls with one joiner)."""
        ev = self.events
        joins = ev["a"] == JOIN
        idx = self.call_index()[joins]
        t = ev["t"][joins]
        first = np.full(self.n_calls, np.iinfo(np.int64).max)
        last = np.full(self.n_calls, np.iinfo(np.int64).min)
        np.minimum.at(first, idx, t)
        np.maximum.at(last, idx, t)
        out = last - first
        out[last < first] = 0
        return out

    def send_mbps_delta(self) -> np.ndarray:
        """Per event change of the call's total send rate."""
        ev = self.events
        calls = np.arange(self.n_calls)
        return _send_delta(ev["a"], ev["k"], ev["p"], ev["mbps"], self.offsets, calls,
                           self._max_pidx())

    def _max_pidx(self) -> int:
        return int(self.events["p"].max()) + 1 if len(self.events) else 1

    def call_peaks(self, calls: np.ndarray | None = None):
        """Per-call peaks judged once every event of a second has applied.

        Returns ``(participants, streams, mbps, send)`` for the selected
        calls (all by default): peak participant count; per media kind
        (audio, video, screen share) the peak number of concurrent streams
        and the peak send rate in Mbps; and the peak total send rate.
        """
        calls = np.arange(self.n_calls) if calls is None else np.asarray(calls, np.int64)
        ev = self.events
        return _call_peaks(ev["t"], ev["a"], ev["k"], ev["p"], ev["mbps"], self.offsets, calls,
                           self._max_pidx())

    def replay_rows(self, calls: np.ndarray):
        """Net change per (call, second) for the selected calls.

        Returns ``(local_call, t, d_participants, d_send_mbps)`` ordered by
        call (position in ``calls``) then time.
        """
        ev = self.events
        return _replay_rows(ev["t"], ev["a"], ev["k"], ev["p"], ev["mbps"], self.offsets,
                            np.asarray(calls, np.int64), self._max_pidx())

    def trajectories(self, calls: np.ndarray, t_max_min: int) -> np.ndarray:
        """Per-minute maximum participant count for selected calls.

        Returns an ``(len(calls), t_max_min + 1)`` int array; minutes after
        the one holding a call's end are ``-1``.
        """
        calls = np.asarray(calls, dtype=np.int64)
        n_t = t_max_min + 1
        out = np.full((len(calls), n_t), -1, dtype=np.int64)
        if len(calls) == 0:
            return out
        lens = self.offsets[calls + 1] - self.offsets[calls]
        rows = _gather_ranges(self.offsets[calls], lens)
        ev = self.events[rows]
        local = np.repeat(np.arange(len(calls)), lens)
        sub_offsets = np.concatenate([[0], np.cumsum(lens)])
        count = _segment_cumsum(_participant_delta(ev["a"]), sub_offsets)
        minute = (ev["t"] - self.start_s[calls][local]) // 60
        # max count reached within each minute
        inside = minute < n_t
        peak = np.zeros((len(calls), n_t), dtype=np.int64)
        np.maximum.at(peak, (local[inside], minute[inside]), count[inside])
        # count carried in from the last event of earlier minutes
        key = local * (n_t + 1) + np.minimum(minute, n_t)
        last_pos = len(key) - 1 - np.unique(key[::-1], return_index=True)[1]
        carry = np.full((len(calls), n_t + 1), -1, dtype=np.int64)
        carry[local[last_pos], np.minimum(minute[last_pos], n_t)] = count[last_pos]
        mark = np.where(carry >= 0, np.arange(n_t + 1), -1)
        np.maximum.accumulate(mark, axis=1, out=mark)
        filled = np.take_along_axis(carry, np.maximum(mark, 0), axis=1)
        filled[mark < 0] = 0
        carried_in = np.zeros((len(calls), n_t), dtype=np.int64)
        carried_in[:, 1:] = filled[:, :n_t - 1]
        out = np.maximum(peak, carried_in)
        end_minute = (self.end_s[calls] - self.start_s[calls]) // 60
        out[np.arange(n_t)[None, :] > end_minute[:, None]] = -1
        return out

    # -- comparison --------------------------------------------------------
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CallTrace):
            return NotImplemented
        return (self.duration_s == other.duration_s and self.seed == other.seed
                and self.report_start_s == other.report_start_s
                and self.call_ids == other.call_ids and self.series_ids == other.series_ids
                and np.array_equal(self.start_s, other.start_s)
                and np.array_equal(self.end_s, other.end_s)
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.events, other.events)
                and [self.participant_names[i] or None for i in range(self.n_calls)]
                == [other.participant_names[i] or None for i in range(other.n_calls)])

    def __repr__(self) -> str:
        return (f"CallTrace(n_calls={self.n_calls}, n_events={len(self.events)}, "
                f"duration_s={self.duration_s}, report_start_s={self.report_start_s})")


class _CallView(Sequence[CallRecord]):
    def __init__(self, trace: CallTrace):
        self._trace = trace

    def __len__(self) -> int:
        return self._trace.n_calls

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return [self._trace.record(j) for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self._trace.record(i)

    def __iter__(self) -> Iterator[CallRecord]:
        for i in range(len(self)):
            yield self._trace.record(i)


def _canonical_order(rows: list[tuple]) -> list[tuple]:
    return sorted(rows, key=lambda r: (r[0], r[2], r[1], r[3]))


def _participant_delta(actions: np.ndarray) -> np.ndarray:
    return (actions == JOIN).astype(np.int64) - (actions == LEAVE).astype(np.int64)


def _segment_cumsum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Cumulative sum restarting at every segment boundary."""
    total = np.cumsum(values)
    if len(values) == 0:
        return total
    lens = np.diff(offsets)
    base = np.concatenate([[0], total])[offsets[:-1]]
    return total - np.repeat(base, lens)


@numba.njit(cache=True)
def _event_delta(i, a, k, p, mbps, rate):
    """Send-rate change of event ``i``; ``rate`` tracks live streams per (participant, kind)."""
    if k[i] < 0:
        return 0.0
    if a[i] == MSTART:
        rate[p[i], k[i]] = mbps[i]
        return mbps[i]
    if a[i] == MQUAL:
        d = mbps[i] - rate[p[i], k[i]]
        rate[p[i], k[i]] = mbps[i]
        return d
    if a[i] == MSTOP:
        rate[p[i], k[i]] = 0.0
        return -mbps[i]
    return 0.0


@numba.njit(cache=True)
def _send_delta(a, k, p, mbps, offsets, calls, n_pidx):
    lens = offsets[calls + 1] - offsets[calls]
    out = np.zeros(lens.sum())
    rate = np.zeros((n_pidx, 3))
    j = 0
    for c in calls:
        for i in range(offsets[c], offsets[c + 1]):
            out[j] = _event_delta(i, a, k, p, mbps, rate)
            j += 1
        for i in range(offsets[c], offsets[c + 1]):
            if k[i] >= 0:
                rate[p[i], k[i]] = 0.0
    return out


@numba.njit(cache=True)
def _call_peaks(t, a, k, p, mbps, offsets, calls, n_pidx):
    n = len(calls)
    parts = np.zeros(n, np.int64)
    streams = np.zeros((n, 3), np.int64)
    kind_mbps = np.zeros((n, 3))
    send = np.zeros(n)
    rate = np.zeros((n_pidx, 3))
    cur_s = np.zeros(3, np.int64)
    cur_m = np.zeros(3)
    for x in range(n):
        c = calls[x]
        lo, hi = offsets[c], offsets[c + 1]
        cur_p = 0
        cur_s[:] = 0
        cur_m[:] = 0.0
        for i in range(lo, hi):
            if a[i] == JOIN:
                cur_p += 1
            elif a[i] == LEAVE:
                cur_p -= 1
            elif k[i] >= 0:
                if a[i] == MSTART:
                    cur_s[k[i]] += 1
                elif a[i] == MSTOP:
                    cur_s[k[i]] -= 1
                cur_m[k[i]] += _event_delta(i, a, k, p, mbps, rate)
            if i + 1 == hi or t[i + 1] != t[i]:
                parts[x] = max(parts[x], cur_p)
                total = 0.0
                for j in range(3):
                    streams[x, j] = max(streams[x, j], cur_s[j])
                    kind_mbps[x, j] = max(kind_mbps[x, j], cur_m[j])
                    total += cur_m[j]
                send[x] = max(send[x], total)
        for i in range(lo, hi):
            if k[i] >= 0:
                rate[p[i], k[i]] = 0.0
    return parts, streams, kind_mbps, send


@numba.njit(cache=True)
def _replay_rows(t, a, k, p, mbps, offsets, calls, n_pidx):
    total = 0
    for c in calls:
        total += offsets[c + 1] - offsets[c]
    r_call = np.empty(total, np.int64)
    r_t = np.empty(total, np.int64)
    r_dn = np.empty(total, np.int64)
    r_ds = np.empty(total)
    rate = np.zeros((n_pidx, 3))
    n = 0
    for x in range(len(calls)):
        c = calls[x]
        lo, hi = offsets[c], offsets[c + 1]
        dn = 0
        ds = 0.0
        for i in range(lo, hi):
            if a[i] == JOIN:
                dn += 1
            elif a[i] == LEAVE:
                dn -= 1
            ds += _event_delta(i, a, k, p, mbps, rate)
            if i + 1 == hi or t[i + 1] != t[i]:
                r_call[n] = x
                r_t[n] = t[i]
                r_dn[n] = dn
                r_ds[n] = ds
                n += 1
                dn = 0
                ds = 0.0
        for i in range(lo, hi):
            if k[i] >= 0:
                rate[p[i], k[i]] = 0.0
    return r_call[:n], r_t[:n], r_dn[:n], r_ds[:n]


def _gather_ranges(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    seg = np.repeat(np.arange(len(lens)), lens)
    firsts = np.concatenate([[0], np.cumsum(lens)[:-1]])
    return starts[seg] + (np.arange(total) - firsts[seg])


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(trace: CallTrace) -> None:
    """Check every trace invariant; raise InvariantViolation on the first failure."""
    seen: set[str] = set()
    for i, cid in enumerate(trace.call_ids):
        if cid in seen:
            raise InvariantViolation(cid, "duplicate call_id")
        seen.add(cid)
        _validate_call(cid, int(trace.start_s[i]), int(trace.end_s[i]),
                       trace.call_events(i), trace.duration_s)


def _validate_call(cid: str, start: int, end: int, events: np.ndarray, duration_s: int) -> None:
    if start > end:
        raise InvariantViolation(cid, "start_s after end_s")
    if len(events) == 0:
        return
    ts = events["t"]
    if ts[0] < start or ts[-1] > end:
        raise InvariantViolation(cid, "events outside [start_s, end_s]")
    if ts[0] < 0 or ts[-1] >= duration_s:
        raise InvariantViolation(cid, "event time outside trace horizon")
    joined: set[int] = set()
    streams: dict[tuple[int, int], float] = {}
    for t, p, a, k, mbps in events.tolist():
        if a == JOIN:
            if p in joined:
                raise InvariantViolation(cid, f"participant {p} joined twice at t={t}")
            joined.add(p)
            continue
        if p not in joined:
            raise InvariantViolation(cid, f"participant {p} acts before joining at t={t}")
        if a == LEAVE:
            if any(key[0] == p for key in streams):
                raise InvariantViolation(cid, f"participant {p} leaves with active streams")
            joined.discard(p)
            continue
        if k == NO_KIND:
            raise InvariantViolation(cid, f"media event without kind at t={t}")
        key = (p, k)
        if a == MSTART:
            if key in streams:
                raise InvariantViolation(cid, f"stream started twice at t={t}")
            if not mbps > 0:
                raise InvariantViolation(cid, f"non-positive bitrate at t={t}")
            streams[key] = mbps
        elif a == MQUAL:
            if key not in streams:
                raise InvariantViolation(cid, f"quality change on inactive stream at t={t}")
            if not mbps > 0:
                raise InvariantViolation(cid, f"non-positive bitrate at t={t}")
            streams[key] = mbps
        elif a == MSTOP:
            if key not in streams:
                raise InvariantViolation(cid, f"stop of inactive stream at t={t}")
            if mbps != streams[key]:
                raise InvariantViolation(cid, f"stop bitrate does not match stream at t={t}")
            del streams[key]
    if joined:
        raise InvariantViolation(cid, "participants still present at end of call")


# ---------------------------------------------------------------------------
# JSON Lines I/O
# ---------------------------------------------------------------------------

FORMAT_NAME = "callpack-trace"
FORMAT_VERSION = 1


def save_trace(trace: CallTrace, path: str | os.PathLike) -> None:
    """Write ``trace`` as JSON Lines, gzip-compressed when ``path`` ends in ``.gz``.

    Output is byte-stable for a given trace (the gzip header carries no
    timestamp or file name).
    """
    header = {"duration_s": trace.duration_s, "format": FORMAT_NAME,
              "report_start_s": trace.report_start_s, "seed": trace.seed,
              "version": FORMAT_VERSION}
    kind_json = {AUDIO: '"audio"', VIDEO: '"video"', SS: '"ss"'}
    action_json = {c: json.dumps(a.value) for c, a in _ACTIONS.items()}
    with _open_text(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for i in range(trace.n_calls):
            names = trace.participant_names[i]
            parts = []
            for t, p, a, k, mbps in trace.call_events(i).tolist():
                pname = json.dumps(names[p]) if names is not None else f'"p{p}"'
                if k == NO_KIND:
                    parts.append(f'{{"a":{action_json[a]},"kind":null,"mbps":null,"p":{pname},"t":{t}}}')
                else:
                    parts.append(f'{{"a":{action_json[a]},"kind":{kind_json[k]},'
                                 f'"mbps":{float(mbps)!r},"p":{pname},"t":{t}}}')
            sid = trace.series_ids[i]
            fh.write(f'{{"call_id":{json.dumps(trace.call_ids[i])},"end_s":{int(trace.end_s[i])},'
                     f'"events":[{",".join(parts)}],'
                     f'"series_id":{json.dumps(sid)},"start_s":{int(trace.start_s[i])}}}\n')


def _open_text(path, mode: str):
    if str(path).endswith(".gz"):
        if mode == "w":
            raw = gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)
            return _Closing(io.TextIOWrapper(raw, encoding="utf-8", newline="\n"), raw.fileobj)
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline="\n" if mode == "w" else None)


class _Closing:
    """Text wrapper that also closes the underlying file GzipFile was handed."""

    def __init__(self, text, fileobj):
        self.text, self.fileobj = text, fileobj

    def __enter__(self):
        return self.text

    def __exit__(self, *exc):
        self.text.close()
        self.fileobj.close()


def load_trace(path: str | os.PathLike) -> CallTrace:
    """Read and validate a JSON Lines trace.

    Raises MalformedLine for unparseable or schema-violating lines and
    InvariantViolation for semantically inconsistent calls.  ``mstop`` events
    may omit ``mbps``; the bitrate of the stopped stream is filled in.
    """
    with _open_text(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedLine(1, "missing header")
    header = _parse_json(lines[0], 1)
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise MalformedLine(1, "not a callpack-trace header")
    if header.get("version") != FORMAT_VERSION:
        raise MalformedLine(1, f"unsupported version {header.get('version')!r}")
    duration = header.get("duration_s")
    if not isinstance(duration, int) or duration <= 0:
        raise MalformedLine(1, "duration_s must be a positive integer")
    seed = header.get("seed")
    report_start = header.get("report_start_s", 0)
    if not isinstance(report_start, int) or not 0 <= report_start <= duration:
        raise MalformedLine(1, "report_start_s out of range")

    call_ids, series_ids, starts, ends, names, offsets = [], [], [], [], [], [0]
    rows: list[tuple] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        obj = _parse_json(line, line_no)
        cid, sid, start, end, raw_events = _check_call_schema(obj, line_no)
        pmap: dict[str, int] = {}
        call_rows = []
        for ev in raw_events:
            t, pname, a, k, mbps = _check_event_schema(ev, line_no)
            p = pmap.setdefault(pname, len(pmap))
            call_rows.append((t, p, a, k, mbps))
        call_rows = _canonical_order(call_rows)
        _fill_stop_rates(cid, call_rows)
        rows.extend(call_rows)
        call_ids.append(cid)
        series_ids.append(sid)
        starts.append(start)
        ends.append(end)
        default = all(name == f"p{i}" for name, i in pmap.items())
        names.append(None if default else tuple(pmap))
        offsets.append(len(rows))
    events = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    trace = CallTrace(duration, call_ids, series_ids, np.array(starts, np.int64),
                      np.array(ends, np.int64), events, np.array(offsets, np.int64),
                      names, seed, report_start)
    validate(trace)
    return trace


def _parse_json(line: str, line_no: int):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(line_no, str(exc)) from None


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_call_schema(obj, line_no: int):
    if not isinstance(obj, dict):
        raise MalformedLine(line_no, "call line must be an object")
    try:
        cid, sid = obj["call_id"], obj["series_id"]
        start, end, events = obj["start_s"], obj["end_s"], obj["events"]
    except KeyError as exc:
        raise MalformedLine(line_no, f"missing key {exc.args[0]!r}") from None
    if not isinstance(cid, str):
        raise MalformedLine(line_no, "call_id must be a string")
    if sid is not None and not isinstance(sid, str):
        raise MalformedLine(line_no, "series_id must be a string or null")
    if not (_is_int(start) and _is_int(end)):
        raise MalformedLine(line_no, "start_s/end_s must be integers")
    if not isinstance(events, list):
        raise MalformedLine(line_no, "events must be a list")
    return cid, sid, start, end, events


def _check_event_schema(ev, line_no: int):
    if not isinstance(ev, dict):
        raise MalformedLine(line_no, "event must be an object")
    t, p, a = ev.get("t"), ev.get("p"), ev.get("a")
    if not _is_int(t) or t < 0:
        raise MalformedLine(line_no, "event t must be a non-negative integer")
    if not isinstance(p, str):
        raise MalformedLine(line_no, "event p must be a string")
    if a not in _ACTION_CODES:
        raise MalformedLine(line_no, f"unknown action {a!r}")
    code = _ACTION_CODES[a]
    kind, mbps = ev.get("kind"), ev.get("mbps")
    if code in (JOIN, LEAVE):
        if kind is not None or mbps is not None:
            raise MalformedLine(line_no, f"{a} events carry no media")
        return t, p, code, NO_KIND, 0.0
    if kind not in _KIND_CODES:
        raise MalformedLine(line_no, f"unknown media kind {kind!r}")
    if mbps is None:
        if code != MSTOP:
            raise MalformedLine(line_no, f"{a} requires mbps")
        mbps = float("nan")
    elif isinstance(mbps, bool) or not isinstance(mbps, (int, float)):
        raise MalformedLine(line_no, "mbps must be a number")
    return t, p, code, _KIND_CODES[kind], float(mbps)


def _fill_stop_rates(cid: str, rows: list[tuple]) -> None:
    active: dict[tuple[int, int], float] = {}
    for i, (t, p, a, k, mbps) in enumerate(rows):
        if a in (MSTART, MQUAL):
            active[(p, k)] = mbps
        elif a == MSTOP and mbps != mbps:  # NaN: rate omitted in the file
            if (p, k) not in active:
                raise InvariantViolation(cid, f"stop of inactive stream at t={t}")
            rows[i] = (t, p, a, k, active[(p, k)])


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

# Hourly arrival weights over a workday: quiet night, morning ramp, lunch
# dip around 11:30-12:30, afternoon plateau, evening decline.
DEFAULT_DIURNAL = (
    0.06, 0.04, 0.03, 0.03, 0.04, 0.08, 0.20, 0.45, 0.85, 1.00, 1.00, 0.80,
    0.60, 0.95, 1.00, 0.95, 0.80, 0.55, 0.35, 0.25, 0.18, 0.14, 0.10, 0.08,
)


@dataclass(frozen=True)
class TraceGenConfig:
    """Parameters of the synthetic workload.

    ``n_calls`` counts calls in the replayed day.  The generated trace also
    holds ``warmup_days`` of non-recurring calls (predictor training data)
    and ``n_weeks`` weekly prior occurrences of every recurring series.
    """

    n_calls: int = 50_000
    recurring_fraction: float = 0.5
    n_series: int | None = None
    burst_weight: float = 0.6
    burst_sigma_s: float = 180.0
    diurnal: tuple[float, ...] = DEFAULT_DIURNAL
    participant_quantiles: tuple[tuple[float, float], ...] = (
        (0.10, 2.5), (0.50, 4.0), (0.90, 10.5), (0.95, 13.0))
    max_participants: int = 500
    joiner_quantiles: tuple[tuple[float, float], ...] = (
        (0.50, 12.0), (0.75, 46.0), (0.95, 293.0), (0.99, 550.0))
    max_joiner_s: int = 1200
    duration_median_s: float = 2400.0
    duration_sigma: float = 0.6
    min_duration_s: int = 300
    audio_mbps: float = 0.1
    video_mbps: float = 1.0
    video_hd_mbps: float = 1.5
    ss_mbps: float = 1.5
    p_video: float = 0.5
    video_concentration: float = 2.0
    p_screen_share: float = 0.2
    p_quality_change: float = 0.1
    series_zero_jitter_fraction: float = 0.2
    # jittered series draw their spread as min + Exp(mean); with 6 occurrences
    # about 20% of series show std 0 and about 65% std <= 1
    series_jitter_min: float = 0.6
    series_jitter_mean: float = 0.65
    n_weeks: int = 5
    warmup_days: int = 1
    day_s: int = 86400
    seed: int = 0

    def validate(self) -> None:
        def fail(key: str, why: str):
            raise InvalidConfig(f"trace.{key}: {why}")

        if self.n_calls < 0:
            fail("n_calls", "must be >= 0")
        if not 0.0 <= self.recurring_fraction <= 1.0:
            fail("recurring_fraction", "must lie in [0, 1]")
        if self.n_series is not None and self.n_series < 1:
            fail("n_series", "must be >= 1")
        if not 0.0 <= self.burst_weight <= 1.0:
            fail("burst_weight", "must lie in [0, 1]")
        if self.burst_sigma_s <= 0:
            fail("burst_sigma_s", "must be positive")
        if len(self.diurnal) != 24 or min(self.diurnal) < 0 or sum(self.diurnal) <= 0:
            fail("diurnal", "needs 24 non-negative weights with a positive sum")
        for key in ("participant_quantiles", "joiner_quantiles"):
            qs = getattr(self, key)
            if len(qs) < 2:
                fail(key, "needs at least two quantile targets")
            ps = [p for p, _ in qs]
            vs = [v for _, v in qs]
            if any(not 0 < p < 1 for p in ps) or any(v <= 0 for v in vs):
                fail(key, "probabilities must lie in (0, 1) and values be positive")
            if any(b <= a for a, b in zip(ps, ps[1:])) or any(b < a for a, b in zip(vs, vs[1:])):
                fail(key, "quantile targets must be monotone")
        if self.max_participants < 1:
            fail("max_participants", "must be >= 1")
        if not 0 < self.max_joiner_s <= 1200:
            fail("max_joiner_s", "must lie in (0, 1200]")
        if self.duration_median_s <= 0 or self.duration_sigma < 0 or self.min_duration_s < 1:
            fail("duration_median_s", "durations must be positive")
        for key in ("audio_mbps", "video_mbps", "video_hd_mbps", "ss_mbps"):
            if getattr(self, key) <= 0:
                fail(key, "bitrates must be positive")
        for key in ("p_video", "p_screen_share", "p_quality_change", "series_zero_jitter_fraction"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                fail(key, "must lie in [0, 1]")
        if self.video_concentration <= 0:
            fail("video_concentration", "must be positive")
        if self.series_jitter_mean < 0:
            fail("series_jitter_mean", "must be >= 0")
        if self.series_jitter_min < 0:
            fail("series_jitter_min", "must be >= 0")
        if self.n_weeks < 0 or self.warmup_days < 0:
            fail("n_weeks", "history lengths must be >= 0")
        if self.day_s < 7200:
            fail("day_s", "must be at least two hours")


def fit_lognormal(quantiles: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit of ``log q = mu + sigma * z_p`` to quantile targets."""
    from scipy.stats import norm

    z = norm.ppf([p for p, _ in quantiles])
    logv = np.log([v for _, v in quantiles])
    sigma, mu = np.polyfit(z, logv, 1)
    return float(mu), float(sigma)


def _quantile_sampler(quantiles: Sequence[tuple[float, float]], upper: float):
    """Inverse CDF interpolating the targets piecewise-linearly in log space.

    Anchored at 1 for u=0 and at ``upper`` for u=1, so the empirical
    quantiles reproduce the targets by construction.
    """
    us = np.array([0.0] + [p for p, _ in quantiles] + [1.0])
    logs = np.log([1.0] + [v for _, v in quantiles] + [upper])

    def sample(u: np.ndarray) -> np.ndarray:
        return np.exp(np.interp(u, us, logs))

    return sample


def expected_burst_ratio(cfg: TraceGenConfig, window_s: float = 120.0) -> float:
    """Arrival rate within +-window of a :00/:30 mark relative to the rate elsewhere."""
    from scipy.stats import norm

    slot = 1800.0
    inside_share = window_s * 2 / slot
    p_near = cfg.burst_weight * (2 * norm.cdf(window_s / cfg.burst_sigma_s) - 1) \
        + (1 - cfg.burst_weight) * inside_share
    return (p_near / inside_share) / ((1 - p_near) / (1 - inside_share))


def burst_ratio(start_s: np.ndarray, window_s: int = 120) -> float:
    """Empirical counterpart of :func:`expected_burst_ratio`."""
    off = np.asarray(start_s) % 1800
    near = (off <= window_s) | (off >= 1800 - window_s)
    inside_share = window_s * 2 / 1800
    frac = near.mean()
    return (frac / inside_share) / ((1 - frac) / (1 - inside_share))


def generate_trace(cfg: TraceGenConfig) -> CallTrace:
    """Synthesize a workload; the same config always yields the same trace.

    Each ingredient draws from its own random stream, so for a fixed seed
    the replayed day keeps its arrivals, base sizes and lifetimes whatever
    ``recurring_fraction`` is.  Raising the fraction only marks more of the
    same calls as recurring (the recurring sets are nested), jitters their
    sizes and adds their history.  Sweeps over the fraction then compare
    like with like.
    """
    cfg.validate()
    (day_rng, pick_rng, hist_rng, warm_rng, day_ev_rng,
     extra_ev_rng, past_ev_rng) = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(7))
    day = cfg.day_s
    history_days = max(7 * cfg.n_weeks, cfg.warmup_days) if cfg.recurring_fraction > 0 and cfg.n_weeks else cfg.warmup_days
    report_start = history_days * day
    horizon = report_start + day

    n_rec = int(round(cfg.n_calls * cfg.recurring_fraction))
    n_non = cfg.n_calls - n_rec
    mu, sigma = fit_lognormal(cfg.participant_quantiles)
    a = cfg.video_concentration * cfg.p_video
    b = cfg.video_concentration * (1 - cfg.p_video)

    # the replayed day's population, drawn per call whether it recurs or not
    day_starts = _sample_arrivals(day_rng, cfg, cfg.n_calls)
    day_size = _sample_participants(day_rng, mu, sigma, cfg.n_calls, cfg.max_participants)
    day_video = _beta(day_rng, a, b, cfg.n_calls)
    zero = day_rng.random(cfg.n_calls) < cfg.series_zero_jitter_fraction
    spread = cfg.series_jitter_min + (day_rng.exponential(cfg.series_jitter_mean, cfg.n_calls)
                                      if cfg.series_jitter_mean > 0 else np.zeros(cfg.n_calls))
    day_noise = day_rng.standard_normal(cfg.n_calls)
    order = pick_rng.permutation(cfg.n_calls)
    rec_idx, non_idx = np.sort(order[:n_rec]), np.sort(order[n_rec:])

    n_series = (cfg.n_series if cfg.n_series is not None else n_rec) if n_rec else 0
    n_series = min(n_series, n_rec) if n_rec else 0
    series_of = np.arange(n_rec) % n_series if n_series else np.zeros(0, np.int64)
    # series k takes its video share and jitter from its first call, and a
    # base size that puts that call's jittered occurrence at its drawn size
    head = rec_idx[:n_series]
    series_video = day_video[head]
    jitter = np.where(zero[head], 0.0, spread[head])
    # (unclipped, so that occurrence lands exactly; occurrences are clipped)
    base = day_size[head] - np.rint(day_noise[head] * jitter).astype(np.int64)

    def jittered(series: np.ndarray, z: np.ndarray) -> np.ndarray:
        noise = np.rint(z * jitter[series]).astype(np.int64)
        return np.clip(base[series] + noise, 1, cfg.max_participants)

    past: list[dict] = []
    today: list[dict] = []
    # recurring: report-day occurrence plus weekly history
    if n_rec:
        tod = day_starts[rec_idx]
        today.append(dict(kind="rec", start=report_start + tod,
                          size=jittered(series_of, day_noise[rec_idx]), base=day_size[rec_idx],
                          video=series_video[series_of],
                          series=series_of, idx=rec_idx, week=np.zeros(n_rec, np.int64)))
        for w in range(1, cfg.n_weeks + 1):
            shift = hist_rng.integers(-60, 61, n_series)
            start = report_start - 7 * w * day + np.clip(tod[:n_series] + shift, 0, day - 1800)
            past.append(dict(kind="hist", start=start,
                             size=jittered(np.arange(n_series), hist_rng.standard_normal(n_series)),
                             video=series_video, series=np.arange(n_series),
                             idx=np.arange(n_series), week=np.full(n_series, w)))
    if n_non:
        today.append(dict(kind="day", start=report_start + day_starts[non_idx],
                          size=day_size[non_idx], base=day_size[non_idx], video=day_video[non_idx],
                          series=np.full(n_non, -1), idx=non_idx, week=np.zeros(n_non, np.int64)))
    n_warm = n_non * cfg.warmup_days
    if n_warm:
        warm_tod = _sample_arrivals(warm_rng, cfg, n_warm)
        warm_day = np.repeat(np.arange(1, cfg.warmup_days + 1), n_non)
        past.append(dict(kind="warm", start=report_start - warm_day * day + warm_tod,
                         size=_sample_participants(warm_rng, mu, sigma, n_warm, cfg.max_participants),
                         video=_beta(warm_rng, a, b, n_warm), series=np.full(n_warm, -1),
                         idx=np.arange(n_warm), week=warm_day))

    blocks = [(_chronological(past), (past_ev_rng, past_ev_rng)),
              (_chronological(today), (day_ev_rng, extra_ev_rng))]
    blocks = [(blk, rng) for blk, rng in blocks if blk is not None]
    if not blocks:
        return CallTrace(horizon, [], [], np.zeros(0, np.int64), np.zeros(0, np.int64),
                         np.zeros(0, EVENT_DTYPE), np.zeros(1, np.int64), [], cfg.seed, report_start)
    # every past call starts before the replayed day, so the blocks are already in order
    return _build_events(cfg, blocks, horizon, report_start)


def _chronological(calls: list[dict]):
    """Concatenate call groups and sort them by start time (ties by id)."""
    if not calls:
        return None
    start = np.concatenate([c["start"] for c in calls]).astype(np.int64)
    size = np.concatenate([c["size"] for c in calls]).astype(np.int64)
    base = np.concatenate([c.get("base", c["size"]) for c in calls]).astype(np.int64)
    video_p = np.concatenate([c["video"] for c in calls])
    series = np.concatenate([c["series"] for c in calls])
    ids = []
    for c in calls:
        if c["kind"] in ("rec", "day"):
            ids += [f"c{i}" for i in c["idx"]]
        elif c["kind"] == "hist":
            ids += [f"h{w}-s{s}" for s, w in zip(c["series"], c["week"])]
        else:
            ids += [f"w{w}-{i}" for i, w in zip(c["idx"], c["week"])]
    order = np.array(sorted(range(len(ids)), key=lambda i: (start[i], ids[i])), dtype=np.int64)
    ids = [ids[i] for i in order]
    series_ids = [f"s{s}" if s >= 0 else None for s in series[order]]
    return ids, series_ids, start[order], size[order], base[order], video_p[order]


def _sample_participants(rng, mu: float, sigma: float, n: int, cap: int) -> np.ndarray:
    raw = np.exp(mu + sigma * rng.standard_normal(n))
    return np.clip(np.rint(raw), 1, cap).astype(np.int64)


def _beta(rng, a: float, b: float, n: int) -> np.ndarray:
    if a <= 0:
        return np.zeros(n)
    if b <= 0:
        return np.ones(n)
    return rng.beta(a, b, n)


def _sample_arrivals(rng, cfg: TraceGenConfig, n: int) -> np.ndarray:
    """Arrival offsets within a day: diurnal slots, bursts at :00/:30."""
    day = cfg.day_s
    latest = day - 1500  # leaves room for joining before the day boundary
    hours = max(1, day // 3600)
    weights = np.array(cfg.diurnal[:hours], dtype=float)
    slot_w = np.repeat(weights, 2) / weights.sum() / 2  # two 30-minute slots per hour
    slot = rng.choice(len(slot_w), size=n, p=slot_w)
    burst = rng.random(n) < cfg.burst_weight
    offset = np.where(burst, rng.normal(0.0, cfg.burst_sigma_s, n), rng.uniform(0, 1800, n))
    t = np.rint(slot * 1800 + offset).astype(np.int64)
    return np.clip(t, 0, latest)


_CHUNK = 100_000


def _build_events(cfg: TraceGenConfig, blocks, horizon, report_start) -> CallTrace:
    chunks, counts, ends = [], [], []
    all_ids, all_series, all_start = [], [], []
    for (ids, series_ids, start, size, base, video_p), rngs in blocks:
        # each call must end before the boundary of the day it starts in
        day_end = (start // cfg.day_s + 1) * cfg.day_s - 1
        for lo in range(0, len(ids), _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            ev, cnt, end = _chunk_events(rngs, cfg, start[sl], size[sl], base[sl], video_p[sl],
                                         day_end[sl])
            chunks.append(ev)
            counts.append(cnt)
            ends.append(end)
        all_ids += ids
        all_series += series_ids
        all_start.append(start)
    events = np.concatenate(chunks)
    del chunks
    offsets = np.concatenate([[0], np.cumsum(np.concatenate(counts))])
    end_s = np.concatenate(ends)
    return CallTrace(horizon, all_ids, all_series, np.concatenate(all_start), end_s, events, offsets,
                     None, cfg.seed, report_start)


def _participant_uniforms(rngs, call_of, pidx, size, base, k: int) -> np.ndarray:
    """``k`` uniforms per participant, laid out by the call's ``base`` size.

    Participant ``p`` of call ``c`` reads column ``p`` of the call's block in
    the first stream when ``p < base[c]`` and the second stream otherwise.
    A call whose size was jittered away from its base then leaves every
    other call's draws untouched.
    """
    common, extra = rngs
    n_extra = np.maximum(size - base, 0)
    cu = common.random((k, int(base.sum())))
    eu = extra.random((k, int(n_extra.sum())))
    first_b = np.cumsum(base) - base
    first_e = np.cumsum(n_extra) - n_extra
    inside = pidx < base[call_of]
    out = np.empty((k, len(call_of)))
    out[:, inside] = cu[:, first_b[call_of[inside]] + pidx[inside]]
    c, p = call_of[~inside], pidx[~inside]
    out[:, ~inside] = eu[:, first_e[c] + p - base[c]]
    return out


def _chunk_events(rngs, cfg: TraceGenConfig, start, size, base, video_p, day_end):
    rng = rngs[0]
    n_calls = len(start)
    joiner = _quantile_sampler(cfg.joiner_quantiles, cfg.max_joiner_s)
    span = np.where(size > 1, np.rint(joiner(rng.random(n_calls))), 0).astype(np.int64)
    span = np.minimum(span, cfg.max_joiner_s)
    dur = np.rint(cfg.duration_median_s * np.exp(cfg.duration_sigma * rng.standard_normal(n_calls)))
    dur = np.maximum(dur.astype(np.int64), np.maximum(cfg.min_duration_s, span + 240))
    end = np.minimum(start + dur, day_end)
    # per-call draws come first, so a call's lifetime and screen share
    # do not depend on the sizes of the calls before it
    has_ss = rng.random(n_calls) < cfg.p_screen_share
    sharer_u = rng.random(n_calls)
    ss_u = rng.random((2, n_calls))

    # participants: the first joins at start, the last at start + span
    call_of = np.repeat(np.arange(n_calls), size)
    first_p = np.concatenate([[0], np.cumsum(size)[:-1]])
    pidx = np.arange(len(call_of)) - first_p[call_of]
    pu = _participant_uniforms(rngs, call_of, pidx, size, base, 6)
    u = pu[0]
    u[pidx == 0] = 0.0
    u[(pidx == size[call_of] - 1) & (size[call_of] > 1)] = 1.0
    # participant indices follow join order
    join = np.sort(start[call_of] + np.rint(u * span[call_of]).astype(np.int64)
                   + call_of * (1 << 32)) - call_of * (1 << 32)
    leave = end[call_of] - (pu[1] * 91).astype(np.int64)
    leave[first_p] = end  # the first joiner stays to the end

    has_video = pu[2] < video_p[call_of]
    v_start = np.minimum(join + (pu[3] * 31).astype(np.int64), leave - 2)
    hd = has_video & (pu[4] < cfg.p_quality_change)
    q_time = v_start + 1 + (pu[5] * (leave - v_start - 2)).astype(np.int64)
    sharer = (first_p + (sharer_u * size).astype(np.int64))[has_ss]
    s_lo, s_hi = join[sharer] + 1, leave[sharer] - 1
    s_a = s_lo + (ss_u[0, has_ss] * (s_hi - s_lo)).astype(np.int64)
    s_b = s_lo + (ss_u[1, has_ss] * (s_hi - s_lo)).astype(np.int64)
    ss_start = np.minimum(s_a, s_b)
    ss_stop = np.minimum(np.maximum(s_a, s_b) + 1, leave[sharer])

    hdr = cfg.video_hd_mbps
    video_stop_rate = np.where(hd, hdr, cfg.video_mbps)
    parts = [
        (call_of, join, pidx, JOIN, NO_KIND, 0.0),
        (call_of, join, pidx, MSTART, AUDIO, cfg.audio_mbps),
        (call_of, leave, pidx, MSTOP, AUDIO, cfg.audio_mbps),
        (call_of, leave, pidx, LEAVE, NO_KIND, 0.0),
        (call_of[has_video], v_start[has_video], pidx[has_video], MSTART, VIDEO, cfg.video_mbps),
        (call_of[hd], q_time[hd], pidx[hd], MQUAL, VIDEO, hdr),
        (call_of[has_video], leave[has_video], pidx[has_video], MSTOP, VIDEO,
         video_stop_rate[has_video]),
        (call_of[sharer], ss_start, pidx[sharer], MSTART, SS, cfg.ss_mbps),
        (call_of[sharer], ss_stop, pidx[sharer], MSTOP, SS, cfg.ss_mbps),
    ]
    c = np.concatenate([p[0] for p in parts])
    t = np.concatenate([p[1] for p in parts])
    pp = np.concatenate([p[2] for p in parts])
    act = np.concatenate([np.full(len(p[0]), p[3], np.int8) for p in parts])
    kind = np.concatenate([np.full(len(p[0]), p[4], np.int8) for p in parts])
    mbps = np.concatenate([np.broadcast_to(np.asarray(p[5], float), len(p[0])) for p in parts])
    order = np.lexsort((kind, pp, act, t, c))
    events = np.zeros(len(c), dtype=EVENT_DTYPE)
    events["t"], events["p"], events["a"] = t[order], pp[order], act[order]
    events["k"], events["mbps"] = kind[order], mbps[order]
    return events, np.bincount(c, minlength=n_calls), end
