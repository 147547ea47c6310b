"""Traffic and CPU model for media processors.

An MP forwards every stream it receives to all other participants of the
call, so a call whose participants send ``S`` Mbps in total handles
``S`` Mbps inbound and ``S * (N - 1)`` Mbps outbound.  CPU is linear in
the total (``S * N``) plus a small fixed overhead per hosted call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

# Streams are (kind, mbps) pairs; kind is informational only.
Stream = tuple[str, float]


@dataclass(frozen=True)
class SkuProfile:
    sku_id: str = "ref"
    perf_ratio: float = 1.0

    def __post_init__(self) -> None:
        if not self.perf_ratio > 0:
            raise ValueError(f"perf_ratio must be positive, got {self.perf_ratio}")


REFERENCE_SKU = SkuProfile()


@dataclass(frozen=True)
class CpuModelParams:
    """Coefficients of the linear CPU model (percent of one reference MP).

    The default ``pct_per_mbps`` puts a 15-participant call with 1 Mbps video
    and 0.1 Mbps audio from everyone at roughly 35%.  Values are never
    clamped at 100.
    """

    base_pct_per_call: float = 0.05
    pct_per_mbps: float = 0.14

    def __post_init__(self) -> None:
        if self.base_pct_per_call < 0 or self.pct_per_mbps < 0:
            raise ValueError("CPU model coefficients must be non-negative")


def call_traffic_mbps(participants: Sequence[Iterable[Stream]]) -> tuple[float, float]:
    """Return ``(in_mbps, out_mbps)`` for one call.

    ``participants`` holds, per participant, the streams it currently sends.
    """
    n = len(participants)
    sent = sum(mbps for streams in participants for _, mbps in streams)
    if n <= 1:
        return sent, 0.0
    return sent, sent * (n - 1)


def cpu_pct(n_participants: float, send_mbps: float, params: CpuModelParams,
            perf_ratio: float = 1.0) -> float:
    """CPU of a call from its participant count and total send rate.

    Fractional participant counts are accepted (predicted peaks).
    """
    if n_participants <= 0:
        return 0.0
    traffic = send_mbps * n_participants  # in + out
    return (params.base_pct_per_call + params.pct_per_mbps * traffic) * perf_ratio


def call_cpu_pct(participants: Sequence[Iterable[Stream]], params: CpuModelParams,
                 sku: SkuProfile = REFERENCE_SKU) -> float:
    if not participants:
        return 0.0
    inbound, outbound = call_traffic_mbps(participants)
    return (params.base_pct_per_call + params.pct_per_mbps * (inbound + outbound)) * sku.perf_ratio


def mp_cpu_pct(calls: Iterable[Sequence[Iterable[Stream]]] | Mapping[str, Sequence[Iterable[Stream]]],
               params: CpuModelParams, sku: SkuProfile = REFERENCE_SKU) -> float:
    """Sum of per-call CPU over the calls hosted on one MP."""
    if isinstance(calls, Mapping):
        calls = calls.values()
    return sum(call_cpu_pct(c, params, sku) for c in calls)
