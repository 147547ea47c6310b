"""Command-line entry points.

    callpack gen-trace --out trace.jsonl [--config exp.toml] [--seed N]
    callpack simulate  --out run/ [--trace trace.jsonl] [--policy tetris --migration mip] [--dump-plans plans.jsonl]
    callpack compare   --out cmp/ --policies rr,llr,llr+greedy,tetris+mip [--trace trace.jsonl]
    callpack report    run/
    callpack config    [--config exp.toml] [flags]      # print the effective configuration

Exit status is 0 on success, 2 for usage or configuration errors (the
message names the offending key) and 1 for anything that fails at run time.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import config as config_mod
from .config import Config
from .engine import MIGRATION_MODES, comparison_csv, compare, dump_plans, prepare, run
from .metrics import RunReport
from .policies import POLICY_NAMES, parse_policy
from .trace import InvalidConfig, TraceError, generate_trace, load_trace, save_trace

log = logging.getLogger("callpack")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="callpack", description="Conference-call placement simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def common(sp, with_run: bool = True):
        sp.add_argument("--config", help="TOML experiment file (defaults apply to missing keys)")
        sp.add_argument("--seed", type=int, help="seed for trace generation and the simulator")
        if with_run:
            sp.add_argument("--cluster-size", type=int, help="number of MPs")
            sp.add_argument("--policy", choices=POLICY_NAMES, help="initial assignment policy")
            sp.add_argument("--migration", choices=MIGRATION_MODES, help="migration mode")

    g = sub.add_parser("gen-trace", help="generate a synthetic trace file")
    common(g, with_run=False)
    g.add_argument("--n-calls", type=int, help="calls in the replayed day")
    g.add_argument("--recurring-fraction", type=float, help="share of calls that belong to a series")
    g.add_argument("--out", required=True, help="trace file to write (JSON Lines)")

    s = sub.add_parser("simulate", help="replay one day under one configuration")
    common(s)
    s.add_argument("--trace", help="trace file; generated from the config when omitted")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--dump-plans", metavar="FILE", help="write every migration move as JSON Lines")

    c = sub.add_parser("compare", help="run several policies on one trace")
    common(c)
    c.add_argument("--trace", help="trace file; generated from the config when omitted")
    c.add_argument("--policies", required=True,
                   help="comma-separated entries, each POLICY or POLICY+MIGRATION (e.g. llr+greedy)")
    c.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("report", help="summarise a simulate or compare output directory")
    r.add_argument("out_dir")

    k = sub.add_parser("config", help="print the effective configuration as TOML")
    common(k)
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _effective_config(args) -> Config:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else Config()
    trace, runc = cfg.trace, cfg.run
    if getattr(args, "seed", None) is not None:
        trace = dataclasses.replace(trace, seed=args.seed)
        runc = dataclasses.replace(runc, seed=args.seed)
    if getattr(args, "n_calls", None) is not None:
        trace = dataclasses.replace(trace, n_calls=args.n_calls)
    if getattr(args, "recurring_fraction", None) is not None:
        trace = dataclasses.replace(trace, recurring_fraction=args.recurring_fraction)
    if getattr(args, "cluster_size", None) is not None:
        runc = dataclasses.replace(runc, cluster=dataclasses.replace(runc.cluster, n_mps=args.cluster_size))
    if getattr(args, "policy", None) is not None:
        runc = dataclasses.replace(runc, policy=parse_policy(args.policy, runc.policy.k))
    if getattr(args, "migration", None) is not None:
        runc = dataclasses.replace(runc, migration=args.migration)
    cfg = Config(trace, runc)
    cfg.validate()
    return cfg


def _parse_entries(text: str, cfg: Config):
    out = []
    for entry in (e.strip() for e in text.split(",")):
        if not entry:
            raise InvalidConfig("policies: empty entry in --policies")
        name, _, mode = entry.partition("+")
        mode = mode or cfg.run.migration
        if mode not in MIGRATION_MODES:
            raise InvalidConfig(f"migration.mode: {mode!r} in --policies entry {entry!r}")
        rc = dataclasses.replace(cfg.run, policy=parse_policy(name, cfg.run.policy.k), migration=mode)
        rc.validate()
        out.append(rc)
    return out


def _check_trace_path(path: str | None) -> None:
    if path is not None and not os.path.isfile(path):
        raise UsageError(f"--trace: no such file {path!r}")


def _trace(args, cfg: Config):
    if args.trace:
        log.info("loading %s", args.trace)
        return load_trace(args.trace)
    log.info("generating %d calls", cfg.trace.n_calls)
    return generate_trace(cfg.trace)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_trace(args) -> int:
    cfg = _effective_config(args)
    trace = generate_trace(cfg.trace)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_trace(trace, args.out)
    log.info("wrote %d calls to %s", trace.n_calls, args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _effective_config(args)
    _check_trace_path(args.trace)
    trace = _trace(args, cfg)
    result = run(cfg.run, trace, keep_plans=bool(args.dump_plans))
    os.makedirs(args.out, exist_ok=True)
    result.report.write(args.out)
    config_mod.dump(cfg, os.path.join(args.out, "config.toml"))
    if args.dump_plans:
        dump_plans(result.plans, args.dump_plans)
    agg = result.report.aggregates()
    print(f"{cfg.run.name}: hot participant-minutes {agg['hot_participant_minutes']}, "
          f"migrations {agg['migrations']}")
    return 0


def cmd_compare(args) -> int:
    cfg = _effective_config(args)
    runs = _parse_entries(args.policies, cfg)
    _check_trace_path(args.trace)
    trace = _trace(args, cfg)
    rp = prepare(trace, cfg.run.t_max_min, cfg.run.n_max_cap, cfg.run.training_days)
    rows = compare(runs, rp)
    os.makedirs(args.out, exist_ok=True)
    text = comparison_csv(rows)
    with open(os.path.join(args.out, "comparison.csv"), "w", encoding="utf-8") as f:
        f.write(text)
    config_mod.dump(cfg, os.path.join(args.out, "config.toml"))
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    d = args.out_dir
    if not os.path.isdir(d):
        raise UsageError(f"report: no such directory {d!r}")
    cmp_path = os.path.join(d, "comparison.csv")
    if os.path.exists(cmp_path):
        import csv

        with open(cmp_path, encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        width = max(len(r["config"]) for r in rows) if rows else 6
        print(f"{'config':<{width}}  {'H':>12}  {'H vs RR':>9}  {'migrations':>10}")
        for r in rows:
            print(f"{r['config']:<{width}}  {int(r['hot_participant_minutes']):>12}  "
                  f"{float(r['hot_participant_minutes_vs_rr']):>9.3f}  {int(r['migrations']):>10}")
        return 0
    if not os.path.exists(os.path.join(d, "aggregates.json")):
        raise UsageError(f"report: {d!r} holds neither aggregates.json nor comparison.csv")
    rep = RunReport.read(d)
    agg = rep.aggregates()
    print(f"run: {agg['label'] or '(unlabelled)'}  ({agg['minutes']} minutes)")
    print(f"hot participant-minutes   {agg['hot_participant_minutes']}")
    print(f"hot call-minutes          {agg['hot_call_minutes']}")
    print(f"hot MP-minutes            {agg['hot_mp_minutes']}")
    print(f"peak hot participants     {agg['peak_hot_participants']}")
    print(f"max CPU (any minute)      {agg['max_of_max_cpu']:.1f}%")
    print(f"busiest minute            {agg['busiest_minute']} (max/avg {agg['busiest_max_to_avg']:.2f})")
    print(f"migrations                {agg['migrations']} over {agg['planner_rounds']} planner rounds")
    if agg["status_counts"]:
        print("solver status             " + ", ".join(f"{k} {v}" for k, v in agg["status_counts"].items()))
    if agg["wave_counts"]:
        print("waves per round           " + ", ".join(f"{k}: {v}" for k, v in agg["wave_counts"].items()))
        print(f"rounds within two waves   {agg['rounds_within_two_waves']:.1%}")
    times = os.path.join(d, "solver_times.json")
    if os.path.exists(times):
        with open(times, encoding="utf-8") as f:
            secs = json.load(f).get("solver_seconds", [])
        if secs:
            print(f"solver wall time          total {sum(secs):.1f}s, worst {max(secs):.2f}s")
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(config_mod.dumps(_effective_config(args)))
    return 0


COMMANDS = {"gen-trace": cmd_gen_trace, "simulate": cmd_simulate, "compare": cmd_compare,
            "report": cmd_report, "config": cmd_config}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse reports usage errors itself
        return int(e.code) if isinstance(e.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidConfig, UsageError) as e:
        print(f"callpack: error: {e}", file=sys.stderr)
        return 2
    except (TraceError, OSError, RuntimeError, ValueError) as e:
        print(f"callpack: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
