"""Run configuration: a single self-contained YAML document.

Every key is checked; unknown keys are errors that name their full path
(``components[2].service.lognormal.sigma``). See ``presets/`` for examples.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ebf.core import (
    Branch,
    ComponentSpec,
    Deterministic,
    Discipline,
    Empirical,
    Exponential,
    InvalidModel,
    Kind,
    Leaf,
    LogNormal,
    Node,
    Par,
    QualityAttr,
    Ref,
    Seq,
    ShiftedPareto,
    Tier,
    Tiered,
    Topology,
    TopologyError,
    YieldModel,
    validate_topology,
)
from ebf.trainer import InvalidPolicy, UpdatePolicy
from ebf.workload import (
    ClosedLoop,
    InvalidWorkload,
    OpenLoop,
    StopAfterDuration,
    StopAfterRequests,
    WorkloadSpec,
)


class ConfigError(ValueError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class UnknownKey(ConfigError):
    def __init__(self, path: str):
        super().__init__(f"unknown key {path}")
        self.path = path


class ConstraintViolation(ConfigError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


# ------------------------------------------------------------------ model


@dataclass(frozen=True)
class AnalyticsOptions:
    percentiles: tuple[float, ...] = (50.0, 90.0, 99.0, 99.9)
    histogram_cap: int = 5_000_000
    quality_tolerance: float = 0.02


@dataclass(frozen=True)
class QueuingOptions:
    """``mu`` of None means: use the topology's bottleneck service rate."""

    mu: float | None = None
    p: float = 99.0


@dataclass(frozen=True)
class TrainerOptions:
    policy: UpdatePolicy
    horizon_s: float
    per_update_cost_s: float
    candidates_s: tuple[float, ...]
    max_interval_s: float | None = None
    # When both are set, updates run inside the simulation on this station.
    station: str | None = None
    interval_s: float | None = None


@dataclass(frozen=True)
class NetworkOptions:
    addresses: tuple[tuple[str, str], ...] = ()
    work: str = "sleep"
    kernel: str | None = None
    timeout_s: float = 10.0
    connections: int = 4

    def address(self, cid: str) -> str:
        for k, v in self.addresses:
            if k == cid:
                return v
        raise KeyError(cid)


@dataclass(frozen=True)
class Thresholds:
    mean_ms: float | None = None
    p99_ms: float | None = None
    max_errors: int | None = None
    quality_ensured: bool = False


@dataclass(frozen=True)
class OutputOptions:
    report: str | None = None
    traces: str | None = None
    breakdown_csv: str | None = None
    arrivals: str | None = None


@dataclass(frozen=True)
class RunConfig:
    name: str
    mode: str
    seed: int
    topology: Topology
    workload: WorkloadSpec
    analytics: AnalyticsOptions = AnalyticsOptions()
    queuing: QueuingOptions | None = None
    trainer: TrainerOptions | None = None
    sweep: tuple[float, ...] = ()
    parallel: bool = False
    engine: str = "auto"
    network: NetworkOptions = NetworkOptions()
    thresholds: Thresholds = Thresholds()
    output: OutputOptions = OutputOptions()
    description: str = field(default="", compare=True)


# ------------------------------------------------------------ path checks


class _Obj:
    """A mapping that remembers its path and which keys were consumed."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConstraintViolation(path or "<root>", f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, default: Any = None, required: bool = False) -> Any:
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConstraintViolation(self.sub(key), "required key missing")
            return default
        return self.data[key]

    def obj(self, key: str, required: bool = False) -> "_Obj | None":
        v = self.get(key, None, required)
        return None if v is None else _Obj(v, self.sub(key))

    def num(self, key: str, default=None, required=False, lo=None, lo_open=False, hi=None, integer=False):
        v = self.get(key, default, required)
        if v is None:
            return None
        path = self.sub(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConstraintViolation(path, f"expected a number, got {v!r}")
        if integer:
            if isinstance(v, float) and not v.is_integer():
                raise ConstraintViolation(path, f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ConstraintViolation(path, f"must be {'>' if lo_open else '>='} {lo:g}, got {v:g}")
        if hi is not None and v > hi:
            raise ConstraintViolation(path, f"must be <= {hi:g}, got {v:g}")
        return v

    def str_(self, key: str, default=None, required=False, choices=None) -> str | None:
        v = self.get(key, default, required)
        if v is None:
            return None
        if not isinstance(v, str):
            raise ConstraintViolation(self.sub(key), f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConstraintViolation(self.sub(key), f"must be one of {', '.join(choices)}, got {v!r}")
        return v

    def one_of(self, choices: tuple[str, ...]) -> str:
        """The single key present from ``choices``; anything else is unknown."""
        present = [k for k in self.data if k in choices]
        for k in self.data:
            if k not in choices:
                raise UnknownKey(self.sub(str(k)))
        if len(present) != 1:
            raise ConstraintViolation(self.path, f"expected exactly one of {', '.join(choices)}")
        self.used.add(present[0])
        return present[0]

    def done(self) -> None:
        for k in self.data:
            if k not in self.used:
                raise UnknownKey(self.sub(str(k)))


def _list(v: Any, path: str) -> list:
    if not isinstance(v, list):
        raise ConstraintViolation(path, f"expected a list, got {type(v).__name__}")
    return v


def _wrap(path: str, fn, *args):
    """Re-raise domain validation errors with the config path attached."""
    try:
        return fn(*args)
    except (InvalidModel, InvalidPolicy, InvalidWorkload, TypeError) as exc:
        raise ConstraintViolation(path, str(exc)) from None


# --------------------------------------------------------------- sections


def _service(o: _Obj) -> Any:
    dist = o.one_of(("deterministic", "exponential", "lognormal", "shifted_pareto", "empirical"))
    p = o.obj(dist, required=True)
    if dist == "deterministic":
        model = _wrap(p.path, Deterministic, p.num("ms", required=True))
    elif dist == "exponential":
        model = _wrap(p.path, Exponential, p.num("rate_per_s", required=True))
    elif dist == "lognormal":
        model = _wrap(p.path, LogNormal, p.num("m", required=True), p.num("s", required=True))
    elif dist == "shifted_pareto":
        model = _wrap(
            p.path, ShiftedPareto,
            p.num("alpha", required=True), p.num("xm_ms", required=True), p.num("shift_ms", 0.0),
        )
    else:
        path = p.str_("path", required=True)
        try:
            model = Empirical(path)
        except OSError as exc:
            raise ConstraintViolation(p.sub("path"), f"cannot read sample file: {exc.strerror}") from None
        except InvalidModel as exc:
            raise ConstraintViolation(p.sub("path"), str(exc)) from None
    p.done()
    return model


def _component(o: _Obj) -> ComponentSpec:
    cid = o.str_("id", required=True)
    kind = Kind(o.str_("kind", "ai", choices=tuple(k.value for k in Kind)))
    servers = o.num("servers", 1, lo=1, integer=True)
    disc = Discipline(o.str_("discipline", "fifo", choices=tuple(d.value for d in Discipline)))
    model = _service(o.obj("service", required=True))
    quality = None
    q = o.obj("quality")
    if q is not None:
        quality = _wrap(
            q.path, QualityAttr,
            q.str_("metric", required=True),
            q.num("target", required=True),
            q.num("achieved"),
        )
        q.done()
    o.done()
    return ComponentSpec(cid, kind, servers, model, disc, quality)


def _yield(o: _Obj) -> YieldModel:
    kind = o.one_of(("deterministic", "poisson"))
    p = o.obj(kind, required=True)
    value = p.num("count" if kind == "deterministic" else "mean", required=True, lo=0)
    p.done()
    return YieldModel(kind, value)


def _node(v: Any, path: str) -> Node:
    if isinstance(v, str):
        return Leaf(v)
    o = _Obj(v, path)
    kind = [k for k in ("seq", "par", "branch", "tiered", "ref") if k in o.data]
    if len(kind) != 1:
        for k in o.data:
            if k not in ("seq", "par", "branch", "tiered", "ref", "name"):
                raise UnknownKey(o.sub(str(k)))
        raise ConstraintViolation(path, "node needs exactly one of seq, par, branch, tiered, ref")
    kind = kind[0]
    if kind == "ref":
        name = o.str_("ref", required=True)
        o.done()
        return Ref(name)
    name = o.str_("name")
    if kind in ("seq", "par"):
        items = _list(o.get(kind), o.sub(kind))
        children = tuple(_node(c, f"{o.sub(kind)}[{i}]") for i, c in enumerate(items))
        o.done()
        return (Seq if kind == "seq" else Par)(children, name)
    if kind == "branch":
        b = o.obj("branch", required=True)
        by = b.str_("by", required=True, choices=("class", "probability"))
        cases = _list(b.get("cases", required=True), b.sub("cases"))
        children, weights, labels = [], [], []
        for i, c in enumerate(cases):
            co = _Obj(c, f"{b.sub('cases')}[{i}]")
            if by == "class":
                labels.append(co.str_("label", required=True, choices=("text", "image")))
            else:
                weights.append(co.num("weight", required=True, lo=0))
            children.append(_node(co.get("node", required=True), co.sub("node")))
            co.done()
        b.done()
        o.done()
        return Branch(by, tuple(children), tuple(weights), tuple(labels), name)
    t = o.obj("tiered", required=True)
    quota = t.num("quota", required=True, lo=1, integer=True)
    tiers = []
    for i, raw in enumerate(_list(t.get("tiers", required=True), t.sub("tiers"))):
        to = _Obj(raw, f"{t.sub('tiers')}[{i}]")
        comp = to.str_("component", required=True)
        ym = _yield(to.obj("yield", required=True))
        vol = to.num("data_volume", lo=0, hi=1)
        to.done()
        tiers.append(Tier(comp, ym, vol))
    t.done()
    o.done()
    return Tiered(tuple(tiers), quota, name)


def _topology(root: _Obj, comps: list[ComponentSpec]) -> Topology:
    t = root.obj("topology", required=True)
    tree = _node(t.get("root", required=True), t.sub("root"))
    entry = t.str_("entry", "")
    delay = t.num("edge_delay_ms", 0.0, lo=0)
    t.done()
    modules = []
    m = root.obj("modules")
    if m is not None:
        for name in m.data:
            modules.append((str(name), _node(m.get(name), m.sub(str(name)))))
        m.done()
    raw = Topology(tuple(comps), tree, entry, tuple(modules), delay)
    try:
        return validate_topology(raw)
    except TopologyError as exc:
        where = f"topology ({exc.node})" if exc.node else "topology"
        raise ConstraintViolation(where, str(exc)) from None


def _workload(o: _Obj, seed: int) -> WorkloadSpec:
    kind = [k for k in ("open", "closed") if k in o.data]
    if len(kind) != 1:
        raise ConstraintViolation(o.path, "workload needs exactly one of open, closed")
    p = o.obj(kind[0], required=True)
    if kind[0] == "open":
        mode = OpenLoop(p.num("rate_per_s", required=True, lo=0, lo_open=True))
    else:
        mode = ClosedLoop(
            p.num("users", required=True, lo=1, integer=True),
            p.num("think_time_ms", required=True, lo=0, lo_open=True),
        )
    p.done()
    if o.has("requests") == o.has("duration_s"):
        raise ConstraintViolation(o.path, "workload needs exactly one of requests, duration_s")
    if o.has("requests"):
        stop = StopAfterRequests(o.num("requests", lo=0, integer=True))
    else:
        stop = StopAfterDuration(o.num("duration_s", lo=0))
    spec = _wrap(
        o.path, WorkloadSpec, mode, o.num("fraction_text", 0.9, lo=0, hi=1), o.num("warmup_s", 0.0, lo=0), stop, seed
    )
    o.done()
    return spec


def _trainer(o: _Obj, topology: Topology) -> TrainerOptions:
    curve = []
    for i, pt in enumerate(_list(o.get("curve", required=True), o.sub("curve"))):
        if not (isinstance(pt, list) and len(pt) == 2 and all(isinstance(x, (int, float)) for x in pt)):
            raise ConstraintViolation(f"{o.sub('curve')}[{i}]", "expected [overhead_fraction, gain]")
        curve.append((float(pt[0]), float(pt[1])))
    policy = _wrap(
        o.path, UpdatePolicy,
        o.str_("mode", "batch", choices=("batch", "streaming")),
        tuple(curve),
        o.num("base_accuracy", 0.0, lo=0, hi=1),
        o.num("weight", 1.0, lo=0),
    )
    cands = tuple(float(x) for x in _list(o.get("candidates_s", required=True), o.sub("candidates_s")))
    if not cands or any(c <= 0 for c in cands):
        raise ConstraintViolation(o.sub("candidates_s"), "need at least one interval, all > 0")
    station = o.str_("station")
    if station is not None and station not in topology.component_ids:
        raise ConstraintViolation(o.sub("station"), f"unknown component {station!r}")
    opts = TrainerOptions(
        policy,
        o.num("horizon_s", required=True, lo=0, lo_open=True),
        o.num("per_update_cost_s", required=True, lo=0),
        cands,
        o.num("max_interval_s", lo=0, lo_open=True),
        station,
        o.num("interval_s", lo=0, lo_open=True),
    )
    if (opts.station is None) != (opts.interval_s is None):
        raise ConstraintViolation(o.path, "station and interval_s must be given together")
    o.done()
    return opts


def _network(o: _Obj, topology: Topology) -> NetworkOptions:
    addrs = []
    a = o.obj("addresses")
    if a is not None:
        for cid in a.data:
            addr = a.str_(str(cid), required=True)
            if str(cid) not in topology.component_ids:
                raise ConstraintViolation(a.sub(str(cid)), f"unknown component {cid!r}")
            _split_addr(addr, a.sub(str(cid)))
            addrs.append((str(cid), addr))
        a.done()
    work = o.str_("work", "sleep", choices=("sleep", "spin", "kernel"))
    kernel = o.str_("kernel")
    if work == "kernel" and kernel is None:
        raise ConstraintViolation(o.sub("kernel"), "work mode 'kernel' needs a kernel name")
    if kernel is not None:
        from ebf.kernels import KERNELS

        if kernel not in KERNELS:
            raise ConstraintViolation(o.sub("kernel"), f"unknown kernel {kernel!r}")
    opts = NetworkOptions(
        tuple(sorted(addrs)),
        work,
        kernel,
        o.num("timeout_s", 10.0, lo=0, lo_open=True),
        o.num("connections", 4, lo=1, integer=True),
    )
    o.done()
    return opts


def _split_addr(addr: str, path: str = "address") -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) < 65536:
        raise ConstraintViolation(path, f"expected host:port, got {addr!r}")
    return host, int(port)


split_addr = _split_addr


# ------------------------------------------------------------------- API


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigSyntaxError(str(getattr(exc, "problem", None) or exc), mark.line + 1 if mark else None) from None
    if data is None:
        raise ConfigSyntaxError("empty configuration", 1)
    root = _Obj(data, "")
    seed = root.num("seed", 0, lo=0, integer=True)
    comps = [
        _component(_Obj(c, f"components[{i}]"))
        for i, c in enumerate(_list(root.get("components", required=True), "components"))
    ]
    topology = _topology(root, comps)
    workload = _workload(root.obj("workload", required=True), seed)

    an = AnalyticsOptions()
    a = root.obj("analytics")
    if a is not None:
        ps = tuple(float(p) for p in _list(a.get("percentiles", list(an.percentiles)), a.sub("percentiles")))
        if any(not 0 < p <= 100 for p in ps):
            raise ConstraintViolation(a.sub("percentiles"), "percentiles must lie in (0, 100]")
        an = AnalyticsOptions(
            ps,
            a.num("histogram_cap", an.histogram_cap, lo=1, integer=True),
            a.num("quality_tolerance", an.quality_tolerance, lo=0),
        )
        a.done()

    queuing = None
    q = root.obj("queuing")
    if q is not None:
        queuing = QueuingOptions(q.num("mu", lo=0, lo_open=True), q.num("p", 99.0, lo=0, lo_open=True, hi=99.9999))
        q.done()

    trainer = None
    t = root.obj("trainer")
    if t is not None:
        trainer = _trainer(t, topology)

    sweep = tuple(float(x) for x in _list(root.get("sweep", []), "sweep"))
    if any(x <= 0 for x in sweep):
        raise ConstraintViolation("sweep", "arrival rates must be > 0")
    if list(sweep) != sorted(sweep) or len(set(sweep)) != len(sweep):
        raise ConstraintViolation("sweep", "arrival rates must be strictly increasing")
    if sweep and not isinstance(workload.mode, OpenLoop):
        raise ConstraintViolation("sweep", "a rate sweep needs an open-loop workload")

    net = NetworkOptions()
    n = root.obj("network")
    if n is not None:
        net = _network(n, topology)

    th = Thresholds()
    h = root.obj("thresholds")
    if h is not None:
        qe = h.get("quality_ensured", False)
        if not isinstance(qe, bool):
            raise ConstraintViolation(h.sub("quality_ensured"), "expected true or false")
        th = Thresholds(
            h.num("mean_ms", lo=0, lo_open=True),
            h.num("p99_ms", lo=0, lo_open=True),
            h.num("max_errors", lo=0, integer=True),
            qe,
        )
        h.done()

    out = OutputOptions()
    o = root.obj("output")
    if o is not None:
        out = OutputOptions(o.str_("report"), o.str_("traces"), o.str_("breakdown_csv"), o.str_("arrivals"))
        o.done()

    parallel = root.get("parallel", False)
    if not isinstance(parallel, bool):
        raise ConstraintViolation("parallel", "expected true or false")
    cfg = RunConfig(
        name=root.str_("name", "run"),
        mode=root.str_("mode", "simulate", choices=("simulate", "network")),
        seed=seed,
        topology=topology,
        workload=workload,
        analytics=an,
        queuing=queuing,
        trainer=trainer,
        sweep=sweep,
        parallel=parallel,
        engine=root.str_("engine", "auto", choices=("auto", "feedforward", "events")),
        network=net,
        thresholds=th,
        output=out,
        description=root.str_("description", ""),
    )
    root.done()
    return cfg


def load_config(path: str | Path, env: dict | None = None) -> RunConfig:
    """Read and parse ``path``; ``EBF_SEED`` in ``env`` overrides the seed."""
    env = os.environ if env is None else env
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigSyntaxError(f"{path} is not UTF-8 text") from None
    cfg = parse_config(text)
    seed = env.get("EBF_SEED")
    if seed is not None and seed != "":
        try:
            cfg = with_seed(cfg, int(seed))
        except ValueError:
            raise ConstraintViolation("EBF_SEED", f"expected a non-negative integer, got {seed!r}") from None
    return cfg


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    from dataclasses import replace

    if seed < 0:
        raise ValueError(seed)
    return replace(cfg, seed=seed, workload=replace(cfg.workload, seed=seed))


# --------------------------------------------------------- serialization


def _node_dict(node: Node) -> Any:
    if isinstance(node, Leaf):
        return node.id
    if isinstance(node, Ref):
        return {"ref": node.name}
    d: dict[str, Any] = {}
    if isinstance(node, (Seq, Par)):
        d["seq" if isinstance(node, Seq) else "par"] = [_node_dict(c) for c in node.children]
    elif isinstance(node, Branch):
        cases = []
        for i, c in enumerate(node.children):
            case = {"label": node.labels[i]} if node.by == "class" else {"weight": node.weights[i]}
            case["node"] = _node_dict(c)
            cases.append(case)
        d["branch"] = {"by": node.by, "cases": cases}
    elif isinstance(node, Tiered):
        tiers = []
        for t in node.tiers:
            td = {"component": t.component, "yield": t.yield_model.to_dict()}
            if t.data_volume is not None:
                td["data_volume"] = t.data_volume
            tiers.append(td)
        d["tiered"] = {"quota": node.quota, "tiers": tiers}
    if node.name:
        d["name"] = node.name
    return d


def to_dict(cfg: RunConfig) -> dict:
    """Plain-data form of ``cfg``; ``parse_config(yaml(to_dict(c))) == c``."""
    topo = cfg.topology
    comps = []
    for c in topo.components:
        cd = {"id": c.id, "kind": c.kind.value, "servers": c.servers, "discipline": c.discipline.value,
              "service": c.service_model.to_dict()}
        if c.quality is not None:
            cd["quality"] = {"metric": c.quality.metric, "target": c.quality.target}
            if c.quality.achieved is not None:
                cd["quality"]["achieved"] = c.quality.achieved
        comps.append(cd)
    wl = cfg.workload
    wd: dict[str, Any]
    if isinstance(wl.mode, OpenLoop):
        wd = {"open": {"rate_per_s": wl.mode.rate_per_s}}
    else:
        wd = {"closed": {"users": wl.mode.users, "think_time_ms": wl.mode.think_time_ms}}
    wd["fraction_text"] = wl.fraction_text
    wd["warmup_s"] = wl.warmup_s
    if isinstance(wl.stop, StopAfterRequests):
        wd["requests"] = wl.stop.n
    else:
        wd["duration_s"] = wl.stop.seconds
    d: dict[str, Any] = {
        "name": cfg.name,
        "description": cfg.description,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "engine": cfg.engine,
        "parallel": cfg.parallel,
        "components": comps,
        "modules": {name: _node_dict(n) for name, n in topo.modules},
        "topology": {"entry": topo.entry, "root": _node_dict(topo.root), "edge_delay_ms": topo.edge_delay_ms},
        "workload": wd,
        "analytics": {
            "percentiles": list(cfg.analytics.percentiles),
            "histogram_cap": cfg.analytics.histogram_cap,
            "quality_tolerance": cfg.analytics.quality_tolerance,
        },
        "sweep": list(cfg.sweep),
    }
    if cfg.queuing is not None:
        d["queuing"] = {"p": cfg.queuing.p}
        if cfg.queuing.mu is not None:
            d["queuing"]["mu"] = cfg.queuing.mu
    if cfg.trainer is not None:
        tr = cfg.trainer
        td = {
            "mode": tr.policy.mode,
            "curve": [list(p) for p in tr.policy.curve],
            "base_accuracy": tr.policy.base_accuracy,
            "weight": tr.policy.weight,
            "horizon_s": tr.horizon_s,
            "per_update_cost_s": tr.per_update_cost_s,
            "candidates_s": list(tr.candidates_s),
        }
        for k in ("max_interval_s", "station", "interval_s"):
            if getattr(tr, k) is not None:
                td[k] = getattr(tr, k)
        d["trainer"] = td
    net = cfg.network
    nd: dict[str, Any] = {"addresses": dict(net.addresses), "work": net.work, "timeout_s": net.timeout_s,
                          "connections": net.connections}
    if net.kernel is not None:
        nd["kernel"] = net.kernel
    d["network"] = nd
    th = {k: v for k, v in vars(cfg.thresholds).items() if v is not None}
    d["thresholds"] = th
    d["output"] = {k: v for k, v in vars(cfg.output).items() if v is not None}
    return d


def serialize(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def config_hash(cfg: RunConfig) -> str:
    """Content digest: sha256 of the canonical JSON form.

    Output paths are left out: where results land does not change the run.
    """
    d = to_dict(cfg)
    d.pop("output", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
