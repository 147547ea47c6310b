"""Simulate conference-call placement on a fleet of media processors.

The usual flow is ``generate_trace`` -> ``RunConfig`` -> ``run``; see the
scripts under ``demos/`` for worked examples.
"""

from .cluster import Cluster, ClusterConfig, SeriesStore, new_cluster
from .config import Config
from .cpu_model import CpuModelParams, SkuProfile, call_traffic_mbps, cpu_pct
from .engine import RunConfig, compare, prepare, run
from .metrics import MetricsSnapshot, RunReport
from .migration import GreedyMigrationConfig, MigrationPlan, PlannerConfig, schedule_waves
from .policies import PolicyKind, parse_policy
from .predictors import NmaxTable, NotEnoughHistory, build_nmax_table, predict_recurring
from .repack import BranchAndBound, RepackModel, RepackSolution, SolveStatus, solve_repack
from .trace import CallTrace, InvalidConfig, TraceGenConfig, generate_trace, load_trace, save_trace

__version__ = "0.1.0"

__all__ = [
    "BranchAndBound", "CallTrace", "Cluster", "ClusterConfig", "Config", "CpuModelParams",
    "GreedyMigrationConfig", "InvalidConfig", "MetricsSnapshot", "MigrationPlan", "NmaxTable",
    "NotEnoughHistory", "PlannerConfig", "PolicyKind", "RepackModel", "RepackSolution",
    "RunConfig", "RunReport", "SeriesStore", "SkuProfile", "SolveStatus", "TraceGenConfig",
    "build_nmax_table", "call_traffic_mbps", "compare", "cpu_pct", "generate_trace",
    "load_trace", "new_cluster", "parse_policy", "predict_recurring", "prepare", "run",
    "save_trace", "schedule_waves", "solve_repack",
]
