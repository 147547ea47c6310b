"""TOML configuration files.

One file describes a whole experiment: how to generate the trace and how to
replay it.  Sections follow the package modules::

    [trace]            generator parameters
    [cluster]          fleet size, thresholds, virtual clusters, SKU mix
    [cpu_model]        CPU model coefficients
    [predictors]       N_max table and media-rate settings
    [policies]         initial assignment policy and its K
    [migration]        mode plus [migration.greedy] / [migration.planner]
    [engine]           seed, label, metrics period

Unknown keys and badly typed values raise ``InvalidConfig`` with the dotted
key in the message.  ``dumps(load(...))`` is stable: a defaulted config
dumps, reloads and dumps again to the same text.
"""

from __future__ import annotations

import dataclasses
import sys
import types
import typing
from dataclasses import dataclass, field, fields

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cluster import ClusterConfig
from .cpu_model import CpuModelParams, SkuProfile
from .engine import RunConfig
from .migration import GreedyMigrationConfig, PlannerConfig
from .policies import parse_policy
from .trace import InvalidConfig, TraceGenConfig


@dataclass
class Config:
    trace: TraceGenConfig = field(default_factory=TraceGenConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        self.trace.validate()
        self.run.validate()


# ---------------------------------------------------------------------------
# dataclass <-> table
# ---------------------------------------------------------------------------

def _coerce(value, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        # only ``X | None`` appears; None is expressed by leaving the key out
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if tp is bool:
        if not isinstance(value, bool):
            raise InvalidConfig(f"{key}: expected true or false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise InvalidConfig(f"{key}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, list):
            raise InvalidConfig(f"{key}: expected an array, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{key}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise InvalidConfig(f"{key}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{key}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    raise InvalidConfig(f"{key}: unsupported setting type {tp!r}")


def _build(cls, table: dict, section: str, skip: tuple[str, ...] = (), rename: dict | None = None):
    """Instantiate ``cls`` from ``table``; unknown keys are errors."""
    rename = rename or {}
    hints = typing.get_type_hints(cls)
    names = {rename.get(f.name, f.name): f.name for f in fields(cls) if f.name not in skip}
    kwargs = {}
    for k, v in table.items():
        if k not in names:
            raise InvalidConfig(f"{section}.{k}: unknown key")
        name = names[k]
        kwargs[name] = _coerce(v, hints[name], f"{section}.{k}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, InvalidConfig):
            raise
        raise InvalidConfig(f"{section}: {e}") from None


def _table(obj, skip: tuple[str, ...] = (), rename: dict | None = None) -> dict:
    rename = rename or {}
    out = {}
    for f in fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        if v is None:
            continue  # TOML has no null; an absent key means "derive it"
        out[rename.get(f.name, f.name)] = _plain(v)
    return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _section(doc: dict, name: str) -> dict:
    t = doc.get(name, {})
    if not isinstance(t, dict):
        raise InvalidConfig(f"{name}: expected a table")
    return t


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

SECTIONS = ("trace", "cluster", "cpu_model", "predictors", "policies", "migration", "engine")


def from_dict(doc: dict) -> Config:
    for k in doc:
        if k not in SECTIONS:
            raise InvalidConfig(f"{k}: unknown section")
    trace = _build(TraceGenConfig, _section(doc, "trace"), "trace")

    cl = dict(_section(doc, "cluster"))
    skus = cl.pop("sku", None)
    cluster = _build(ClusterConfig, cl, "cluster", skip=("sku_mix",))
    if skus is not None:
        if not isinstance(skus, list) or not skus:
            raise InvalidConfig("cluster.sku: expected a non-empty array of tables")
        mix = []
        for i, s in enumerate(skus):
            key = f"cluster.sku[{i}]"
            if not isinstance(s, dict):
                raise InvalidConfig(f"{key}: expected a table")
            s = dict(s)
            weight = _coerce(s.pop("weight", 1.0), float, f"{key}.weight")
            mix.append((_build(SkuProfile, s, key), weight))
        cluster = dataclasses.replace(cluster, sku_mix=tuple(mix))

    cpu = _build(CpuModelParams, _section(doc, "cpu_model"), "cpu_model")

    pred = _section(doc, "predictors")
    pol = dict(_section(doc, "policies"))
    name = _coerce(pol.pop("name", "llr"), str, "policies.name")
    k = _coerce(pol.pop("k", 5), int, "policies.k")
    for extra in pol:
        raise InvalidConfig(f"policies.{extra}: unknown key")
    policy = parse_policy(name, k)

    mig = dict(_section(doc, "migration"))
    mode = _coerce(mig.pop("mode", "none"), str, "migration.mode")
    greedy = _build(GreedyMigrationConfig, _section(mig, "greedy"), "migration.greedy")
    planner = _build(PlannerConfig, _section(mig, "planner"), "migration.planner")
    for extra in mig:
        if extra not in ("greedy", "planner"):
            raise InvalidConfig(f"migration.{extra}: unknown key")

    eng = dict(_section(doc, "engine"))
    run_keys = {"seed": int, "label": str, "metrics_period_s": int}
    pred_keys = {"t_max_min": int, "n_max_cap": int, "training_days": int,
                 "avg_media_rate_mbps": float}
    kw = {}
    for sect, table, allowed in (("engine", eng, run_keys), ("predictors", pred, pred_keys)):
        for key, v in table.items():
            if key not in allowed:
                raise InvalidConfig(f"{sect}.{key}: unknown key")
            kw[key] = _coerce(v, allowed[key], f"{sect}.{key}")
    run = RunConfig(policy=policy, migration=mode, cluster=cluster, cpu=cpu, planner=planner,
                    greedy=greedy, **kw)
    cfg = Config(trace, run)
    cfg.validate()
    return cfg


def to_dict(cfg: Config) -> dict:
    r = cfg.run
    cluster = _table(r.cluster, skip=("sku_mix",))
    cluster["sku"] = [{**_table(sku), "weight": w} for sku, w in r.cluster.sku_mix]
    pred = {"t_max_min": r.t_max_min, "n_max_cap": r.n_max_cap, "training_days": r.training_days}
    if r.avg_media_rate_mbps is not None:
        pred["avg_media_rate_mbps"] = r.avg_media_rate_mbps
    eng = {"seed": r.seed, "metrics_period_s": r.metrics_period_s}
    if r.label:
        eng["label"] = r.label
    return {
        "trace": _table(cfg.trace),
        "cluster": cluster,
        "cpu_model": _table(r.cpu),
        "predictors": pred,
        "policies": {"name": r.policy.name, "k": r.policy.k},
        "migration": {"mode": r.migration, "greedy": _table(r.greedy), "planner": _table(r.planner)},
        "engine": eng,
    }


def loads(text: str) -> Config:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise InvalidConfig(f"config: not valid TOML ({e})") from None
    return from_dict(doc)


def load(path) -> Config:
    with open(path, "rb") as f:
        try:
            doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise InvalidConfig(f"config: {path} is not valid TOML ({e})") from None
    return from_dict(doc)


def dumps(cfg: Config) -> str:
    return tomli_w.dumps(to_dict(cfg))


def dump(cfg: Config, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(cfg))
