"""Per-minute cluster statistics and whole-run aggregates."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile of an ascending array (q in (0, 100])."""
    n = len(sorted_values)
    if n == 0:
        return 0.0
    rank = max(1, int(np.ceil(q / 100.0 * n)))
    return float(sorted_values[rank - 1])


@dataclass(frozen=True)
class MetricsSnapshot:
    minute: int
    max_cpu: float
    p95_cpu: float
    p50_cpu: float
    min_cpu: float
    avg_cpu: float
    max_cpu_clamped: float
    hot_mps: int
    hot_calls: int
    hot_participants: int
    active_calls: int
    active_participants: int
    migrations: int          # cumulative


def take_snapshot(minute: int, cpu: np.ndarray, ncalls: np.ndarray, parts: np.ndarray,
                  hot_threshold: float, migrations: int) -> MetricsSnapshot:
    s = np.sort(cpu)
    hot = cpu >= hot_threshold
    mx = float(s[-1]) if len(s) else 0.0
    return MetricsSnapshot(
        minute, mx, nearest_rank(s, 95), nearest_rank(s, 50),
        float(s[0]) if len(s) else 0.0, float(cpu.mean()) if len(cpu) else 0.0,
        min(mx, 100.0), int(hot.sum()), int(ncalls[hot].sum()), int(parts[hot].sum()),
        int(ncalls.sum()), int(parts.sum()), int(migrations))


SNAPSHOT_FIELDS = [f.name for f in fields(MetricsSnapshot)]


@dataclass
class RunReport:
    snapshots: list[MetricsSnapshot]
    label: str = ""
    # planner bookkeeping
    migrations: int = 0
    planner_rounds: int = 0
    status_counts: dict[str, int] = field(default_factory=dict)
    wave_counts: dict[int, int] = field(default_factory=dict)   # waves per non-empty round
    deferred_moves: int = 0
    solver_seconds: list[float] = field(default_factory=list)   # wall clock, not reproducible

    def aggregates(self) -> dict:
        snaps = self.snapshots
        out: dict = {"label": self.label, "minutes": len(snaps)}
        if snaps:
            col = {k: np.array([getattr(s, k) for s in snaps]) for k in SNAPSHOT_FIELDS}
            busiest = int(np.argmax(col["avg_cpu"]))
            avg = col["avg_cpu"][busiest]
            out.update({
                "hot_participant_minutes": int(col["hot_participants"].sum()),
                "hot_call_minutes": int(col["hot_calls"].sum()),
                "hot_mp_minutes": int(col["hot_mps"].sum()),
                "peak_hot_participants": int(col["hot_participants"].max()),
                "max_of_max_cpu": float(col["max_cpu"].max()),
                "max_of_p95_cpu": float(col["p95_cpu"].max()),
                "max_of_p50_cpu": float(col["p50_cpu"].max()),
                "max_of_min_cpu": float(col["min_cpu"].max()),
                "max_of_avg_cpu": float(col["avg_cpu"].max()),
                "max_of_max_cpu_clamped": float(col["max_cpu_clamped"].max()),
                "busiest_minute": busiest,
                "busiest_max_to_avg": float(col["max_cpu"][busiest] / avg) if avg > 0 else 0.0,
            })
        else:
            out.update({k: 0 for k in ("hot_participant_minutes", "hot_call_minutes",
                                       "hot_mp_minutes", "peak_hot_participants")})
        rounds_with_moves = sum(self.wave_counts.values())
        out.update({
            "migrations": self.migrations,
            "planner_rounds": self.planner_rounds,
            "deferred_moves": self.deferred_moves,
            "status_counts": dict(sorted(self.status_counts.items())),
            "wave_counts": {str(k): v for k, v in sorted(self.wave_counts.items())},
            "rounds_within_two_waves": (sum(v for k, v in self.wave_counts.items() if k <= 2)
                                        / rounds_with_moves) if rounds_with_moves else 1.0,
        })
        return out

    @property
    def H(self) -> int:
        return int(sum(s.hot_participants for s in self.snapshots))

    # -- files ---------------------------------------------------------------
    def snapshots_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SNAPSHOT_FIELDS)
        for s in self.snapshots:
            w.writerow([_fmt(v) for v in asdict(s).values()])
        return buf.getvalue()

    def aggregates_json(self) -> str:
        return json.dumps(self.aggregates(), sort_keys=True, indent=1) + "\n"

    def write(self, out_dir: str | os.PathLike) -> None:
        """snapshots.csv and aggregates.json are reproducible; solver_times.json is not."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "snapshots.csv"), "w", encoding="utf-8") as f:
            f.write(self.snapshots_csv())
        with open(os.path.join(out_dir, "aggregates.json"), "w", encoding="utf-8") as f:
            f.write(self.aggregates_json())
        with open(os.path.join(out_dir, "solver_times.json"), "w", encoding="utf-8") as f:
            json.dump({"solver_seconds": self.solver_seconds}, f)
            f.write("\n")

    @classmethod
    def read(cls, out_dir: str | os.PathLike) -> "RunReport":
        with open(os.path.join(out_dir, "snapshots.csv"), encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        with open(os.path.join(out_dir, "aggregates.json"), encoding="utf-8") as f:
            agg = json.load(f)
        types = {f.name: f.type for f in fields(MetricsSnapshot)}
        snaps = [MetricsSnapshot(**{k: (int(v) if types[k] in (int, "int") else float(v))
                                    for k, v in r.items()}) for r in rows]
        return cls(snaps, agg.get("label", ""), agg.get("migrations", 0), agg.get("planner_rounds", 0),
                   agg.get("status_counts", {}), {int(k): v for k, v in agg.get("wave_counts", {}).items()},
                   agg.get("deferred_moves", 0))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)
