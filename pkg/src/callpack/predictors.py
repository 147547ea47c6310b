"""Peak predictors for new calls.

Recurring calls use a weighted moving average over the last occurrences
of their series.  Other calls use a lookup table ``N_max(n, t)``: given
``n`` participants ``t`` minutes into a call, the expected peak is the
average final size of comparable past calls, where call ``x`` counts
towards every size ``m`` with ``n <= m <= c(x)``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import KINDS, OccurrenceSummary
from .cpu_model import CpuModelParams, cpu_pct

WMA_WEIGHTS = (0.5, 0.25, 0.125, 0.125)
MIN_HISTORY = 4


class NotEnoughHistoryType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotEnoughHistory"

    def __bool__(self) -> bool:
        return False


NotEnoughHistory = NotEnoughHistoryType()


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class RecurringEstimate:
    peak_participants: float
    media_streams: tuple[float, float, float]
    media_mbps: tuple[float, float, float]
    peak_cpu_pct: float  # reference SKU


def wma(values_newest_first: Sequence[float]) -> float:
    """0.5 p0 + 0.25 p1 + 0.125 p2 + 0.125 mean(p3, p4, ...)."""
    p = values_newest_first
    return (WMA_WEIGHTS[0] * p[0] + WMA_WEIGHTS[1] * p[1] + WMA_WEIGHTS[2] * p[2]
            + WMA_WEIGHTS[3] * (sum(p[3:]) / len(p[3:])))


def predict_recurring(history: Sequence[OccurrenceSummary],
                      params: CpuModelParams = CpuModelParams()):
    """Estimate the next occurrence from ``history`` (ordered oldest to newest)."""
    if len(history) < MIN_HISTORY:
        return NotEnoughHistory
    newest = list(reversed(history))
    peak = wma([o.peak_participants for o in newest])
    streams = tuple(wma([o.media_streams[k] for o in newest]) for k in range(len(KINDS)))
    mbps = tuple(wma([o.media_mbps[k] for o in newest]) for k in range(len(KINDS)))
    return RecurringEstimate(peak, streams, mbps, cpu_pct(peak, sum(mbps), params))


def predict_recurring_many(peaks: np.ndarray, mbps: np.ndarray, count: np.ndarray,
                           params: CpuModelParams) -> np.ndarray:
    """Vectorized peak-CPU estimate for rows of a SeriesStore buffer.

    ``peaks`` is ``(S, R)`` and ``mbps`` ``(S, R, 3)``, both oldest first
    with ``count`` valid entries per row.  Rows with too little history
    get ``nan``.
    """
    s = len(count)
    out = np.full(s, np.nan)
    ok = count >= MIN_HISTORY
    if not ok.any():
        return out
    rows = np.flatnonzero(ok)
    c = count[rows]
    r = peaks.shape[1]
    # newest-first positions
    newest = c[:, None] - 1 - np.arange(r)[None, :]
    valid = newest >= 0
    pos = np.where(valid, newest, 0)

    def combine(vals: np.ndarray) -> np.ndarray:
        v = np.take_along_axis(vals, pos, axis=1)
        rest = np.where(valid[:, 3:], v[:, 3:], 0.0).sum(axis=1) / (c - 3)
        return (WMA_WEIGHTS[0] * v[:, 0] + WMA_WEIGHTS[1] * v[:, 1]
                + WMA_WEIGHTS[2] * v[:, 2] + WMA_WEIGHTS[3] * rest)

    peak = combine(peaks[rows].astype(float))
    send = sum(combine(mbps[rows, :, k]) for k in range(mbps.shape[2]))
    out[rows] = np.where(peak > 0, (params.base_pct_per_call + params.pct_per_mbps * send * peak), 0.0)
    return out


# ---------------------------------------------------------------------------
# non-recurring estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CallTrajectoryDataset:
    """Per-minute participant counts of training calls.

    ``p[x, t]`` is the maximum participant count of call ``x`` during
    minute ``t`` of its life, or ``-1`` once the call is over.  ``c[x]``
    is the call's peak over its whole life, so ``c >= p`` everywhere, with
    equality at some minute whenever the call fits inside the window.
    """

    p: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        if self.p.ndim != 2 or len(self.p) != len(self.c):
            raise ValueError("p must be (calls, minutes) and match c")
        if len(self.c) and (self.p.max(axis=1) > self.c).any():
            raise ValueError("c(x) must be at least every p_t(x)")

    @classmethod
    def from_trace(cls, trace, calls: np.ndarray, t_max_min: int = 120) -> "CallTrajectoryDataset":
        calls = np.asarray(calls, dtype=np.int64)
        return cls(trace.trajectories(calls, t_max_min), trace.max_participants()[calls])

    def __len__(self) -> int:
        return len(self.c)


@dataclass(frozen=True)
class NmaxTable:
    """``values[n, t]`` for ``0 <= n <= n_max_cap`` and ``0 <= t <= t_max_min``."""

    values: np.ndarray

    @property
    def n_max_cap(self) -> int:
        return self.values.shape[0] - 1

    @property
    def t_max_min(self) -> int:
        return self.values.shape[1] - 1

    def lookup(self, n, t_min):
        """Vectorized lookup; ``t`` is clamped to the table and ``n`` past the cap maps to itself."""
        n = np.asarray(n)
        t = np.clip(np.asarray(t_min), 0, self.t_max_min)
        inside = n <= self.n_max_cap
        v = self.values[np.where(inside, np.maximum(n, 0), 0), t]
        out = np.where(inside, v, n).astype(float)
        return out if out.ndim else float(out)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["n", "t", "value"])
            for n in range(self.values.shape[0]):
                for t in range(self.values.shape[1]):
                    w.writerow([n, t, repr(float(self.values[n, t]))])

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "NmaxTable":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        n_max = max(int(r["n"]) for r in rows)
        t_max = max(int(r["t"]) for r in rows)
        values = np.full((n_max + 1, t_max + 1), np.nan)
        for r in rows:
            values[int(r["n"]), int(r["t"])] = float(r["value"])
        if np.isnan(values).any():
            raise ValueError(f"{path}: table has missing (n, t) cells")
        return cls(values)


def build_nmax_table(data: CallTrajectoryDataset, n_max_cap: int = 500) -> NmaxTable:
    """Tabulate N_max(n, t) for every n up to ``n_max_cap``.

    For call x with per-minute count p and peak c, and a query n with
    p <= n <= c, x contributes weight 1 to each size m in [n, c].  So the
    denominator gains (c - n + 1) and the numerator the sum n + ... + c.
    Both are accumulated as integers per (t, n) from a histogram over
    (p, c), which keeps the result identical to direct enumeration.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot build an N_max table from zero calls")
    p, c = data.p, np.minimum(data.c, n_max_cap + 1)
    n_t = p.shape[1]
    size = n_max_cap + 2  # last bucket collects peaks above the cap
    values = np.empty((n_max_cap + 1, n_t))
    n = np.arange(n_max_cap + 1)
    c_all = np.asarray(data.c, dtype=np.int64)
    for t in range(n_t):
        active = p[:, t] >= 0
        pt = np.minimum(p[active, t].astype(np.int64), n_max_cap + 1)
        ct = np.asarray(c[active], dtype=np.int64)
        craw = c_all[active]
        flat = pt * size + ct

        def grid(weights=None):
            counts = np.bincount(flat, weights, minlength=size * size)
            return np.rint(counts).astype(np.int64).reshape(size, size)

        # float64 sums of integers stay exact far beyond any realistic dataset
        hist, s1, s2 = grid(), grid(craw), grid(craw * (craw + 1) // 2)
        # prefix over p (rows): calls with p <= n
        hist = np.cumsum(hist, axis=0)
        s1 = np.cumsum(s1, axis=0)
        s2 = np.cumsum(s2, axis=0)
        # suffix over c (columns): calls with c >= n
        hist = np.cumsum(hist[:, ::-1], axis=1)[:, ::-1]
        s1 = np.cumsum(s1[:, ::-1], axis=1)[:, ::-1]
        s2 = np.cumsum(s2[:, ::-1], axis=1)[:, ::-1]
        cnt = hist[n, n]
        sum_c = s1[n, n]
        sum_tri = s2[n, n]
        den = sum_c - cnt * (n - 1)                      # sum of (c - n + 1)
        num = sum_tri - cnt * ((n - 1) * n // 2)         # sum of (n + ... + c)
        with np.errstate(invalid="ignore", divide="ignore"):
            values[:, t] = np.where(den > 0, num / np.where(den > 0, den, 1), n)
    return NmaxTable(values)


def avg_media_rate(peak_send_mbps: np.ndarray, peak_participants: np.ndarray) -> float:
    """Mean per-participant send rate over training calls, judged at their peaks."""
    ok = peak_participants > 0
    if not ok.any():
        return 0.0
    return float(np.mean(peak_send_mbps[ok] / peak_participants[ok]))


def estimate_nonrecurring_peak_cpu(participants, age_s, table: NmaxTable, rate_mbps: float,
                                   params: CpuModelParams = CpuModelParams(),
                                   perf_ratio: float = 1.0):
    """Peak CPU of a call that is ``age_s`` old with ``participants`` now.

    The predicted peak size is treated as ``N_max`` participants each
    sending ``rate_mbps``; accepts scalars or arrays.
    """
    nmax = table.lookup(participants, np.asarray(age_s) // 60)
    traffic = rate_mbps * nmax * nmax
    out = np.where(nmax > 0, (params.base_pct_per_call + params.pct_per_mbps * traffic) * perf_ratio, 0.0)
    return out if np.ndim(out) else float(out)


def nmax_cpu_table(table: NmaxTable, rate_mbps: float, params: CpuModelParams) -> np.ndarray:
    """The table converted to reference-SKU peak CPU (same shape)."""
    v = table.values
    return np.where(v > 0, params.base_pct_per_call + params.pct_per_mbps * rate_mbps * v * v, 0.0)
