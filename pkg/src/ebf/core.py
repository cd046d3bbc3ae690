"""Domain types shared by every module: components, service-time models,
composition trees, spans and request traces.

All timestamps and durations carried by spans and traces are integer
nanoseconds on a monotonic clock. Service-time models are parameterised in
milliseconds (the unit people write configs in) and sample seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000

BRANCH_WEIGHT_TOL = 1e-9


class Kind(str, Enum):
    AI = "ai"
    NON_AI = "non_ai"


class Discipline(str, Enum):
    FIFO = "fifo"


class RequestClass(str, Enum):
    TEXT = "text"
    IMAGE = "image"

    @property
    def code(self) -> int:
        return 0 if self is RequestClass.TEXT else 1

    @classmethod
    def from_code(cls, code: int) -> "RequestClass":
        return cls.TEXT if code == 0 else cls.IMAGE


# ---------------------------------------------------------------- errors


class TopologyError(ValueError):
    """Base class for topology validation failures; ``node`` names the culprit."""

    def __init__(self, message: str, node: str | None = None):
        super().__init__(message)
        self.node = node


class CycleDetected(TopologyError):
    pass


class UnknownNodeId(TopologyError):
    pass


class BranchWeightSumInvalid(TopologyError):
    pass


class EmptyTopology(TopologyError):
    pass


class DuplicateNodeUse(TopologyError):
    pass


class InvalidEntry(TopologyError):
    pass


class InvalidModel(ValueError):
    pass


class MalformedSpanTree(ValueError):
    pass


# ------------------------------------------------------- service models


class ServiceTimeModel:
    """Distribution of one station's service time.

    Subclasses implement :meth:`draw` (vectorised, seconds) and
    :meth:`mean_s`.
    """

    variant: str = ""

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mean_s(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Deterministic(ServiceTimeModel):
    ms: float
    variant = "deterministic"

    def __post_init__(self):
        if not self.ms > 0:
            raise InvalidModel(f"deterministic duration must be > 0, got {self.ms}")

    def draw(self, rng, n):
        return np.full(n, self.ms / 1e3)

    def mean_s(self):
        return self.ms / 1e3

    def to_dict(self):
        return {"deterministic": {"ms": self.ms}}


@dataclass(frozen=True)
class Exponential(ServiceTimeModel):
    rate_per_s: float
    variant = "exponential"

    def __post_init__(self):
        if not self.rate_per_s > 0:
            raise InvalidModel(f"exponential rate must be > 0, got {self.rate_per_s}")

    def draw(self, rng, n):
        return rng.exponential(1.0 / self.rate_per_s, n)

    def mean_s(self):
        return 1.0 / self.rate_per_s

    def to_dict(self):
        return {"exponential": {"rate_per_s": self.rate_per_s}}


@dataclass(frozen=True)
class LogNormal(ServiceTimeModel):
    """Log-normal with ``m``/``s`` the mean/std of log(duration in ms)."""

    m: float
    s: float
    variant = "lognormal"

    def __post_init__(self):
        if not self.s > 0:
            raise InvalidModel(f"lognormal scale must be > 0, got {self.s}")

    def draw(self, rng, n):
        return rng.lognormal(self.m, self.s, n) / 1e3

    def mean_s(self):
        return math.exp(self.m + self.s * self.s / 2) / 1e3

    def to_dict(self):
        return {"lognormal": {"m": self.m, "s": self.s}}


@dataclass(frozen=True)
class ShiftedPareto(ServiceTimeModel):
    alpha: float
    xm_ms: float
    shift_ms: float = 0.0
    variant = "shifted_pareto"

    def __post_init__(self):
        if not self.alpha > 1:
            raise InvalidModel(f"pareto shape must be > 1 for a finite mean, got {self.alpha}")
        if not self.xm_ms > 0 or self.shift_ms < 0:
            raise InvalidModel("pareto scale must be > 0 and shift >= 0")

    def draw(self, rng, n):
        # numpy's pareto is Lomax; +1 gives classical Pareto with x_m = 1.
        return (self.shift_ms + self.xm_ms * (rng.pareto(self.alpha, n) + 1.0)) / 1e3

    def mean_s(self):
        return (self.shift_ms + self.alpha * self.xm_ms / (self.alpha - 1)) / 1e3

    def to_dict(self):
        return {
            "shifted_pareto": {"alpha": self.alpha, "xm_ms": self.xm_ms, "shift_ms": self.shift_ms}
        }


@dataclass(frozen=True)
class Empirical(ServiceTimeModel):
    """Resamples durations (ms, one per line) read from ``path``."""

    path: str
    samples_ms: tuple[float, ...] = field(default=(), compare=False, repr=False)
    variant = "empirical"

    def __post_init__(self):
        if not self.samples_ms:
            object.__setattr__(self, "samples_ms", load_empirical(self.path))
        if not self.samples_ms:
            raise InvalidModel(f"empirical sample file {self.path!r} is empty")
        if min(self.samples_ms) <= 0:
            raise InvalidModel(f"empirical sample file {self.path!r} has non-positive durations")

    def draw(self, rng, n):
        return rng.choice(np.asarray(self.samples_ms), n) / 1e3

    def mean_s(self):
        return float(np.mean(self.samples_ms)) / 1e3

    def to_dict(self):
        return {"empirical": {"path": self.path}}


def load_empirical(path: str | Path) -> tuple[float, ...]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(float(line))
    return tuple(out)


def to_ns(seconds: np.ndarray) -> np.ndarray:
    """Seconds -> int64 ns, clamped to at least 1 ns (durations are strictly positive)."""
    return np.maximum(np.rint(np.asarray(seconds) * NS_PER_S), 1).astype(np.int64)


def sample_service_time(model: ServiceTimeModel, rng: np.random.Generator) -> int:
    """Draw one service duration in nanoseconds."""
    return int(to_ns(model.draw(rng, 1))[0])


# ------------------------------------------------------------ components


@dataclass(frozen=True)
class QualityAttr:
    metric: str
    target: float
    achieved: float | None = None

    def __post_init__(self):
        if not 0 < self.target <= 1:
            raise InvalidModel(f"quality target must lie in (0, 1], got {self.target}")
        if self.achieved is not None and not 0 <= self.achieved <= 1:
            raise InvalidModel(f"achieved quality must lie in [0, 1], got {self.achieved}")


@dataclass(frozen=True)
class ComponentSpec:
    id: str
    kind: Kind
    servers: int
    service_model: ServiceTimeModel
    discipline: Discipline = Discipline.FIFO
    quality: QualityAttr | None = None

    def __post_init__(self):
        if not isinstance(self.servers, int) or self.servers < 1:
            raise InvalidModel(f"component {self.id!r}: servers must be a positive integer")


# ------------------------------------------------------ composition tree


@dataclass(frozen=True)
class YieldModel:
    """Results returned by one probe of a search tier."""

    kind: str  # "deterministic" | "poisson"
    value: float

    def __post_init__(self):
        if self.kind not in ("deterministic", "poisson") or self.value < 0:
            raise InvalidModel(f"bad yield model {self.kind}({self.value})")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "deterministic":
            return np.full(n, int(self.value), dtype=np.int64)
        return rng.poisson(self.value, n).astype(np.int64)

    def to_dict(self):
        key = "count" if self.kind == "deterministic" else "mean"
        return {self.kind: {key: self.value}}


class Node:
    """Composition-tree node. ``key`` is filled in by validation."""

    key: str = ""


@dataclass(frozen=True)
class Leaf(Node):
    id: str
    key: str = ""


@dataclass(frozen=True)
class Ref(Node):
    """Reference to a named module; only present before validation."""

    name: str
    key: str = ""


@dataclass(frozen=True)
class Seq(Node):
    children: tuple[Node, ...]
    name: str | None = None
    key: str = ""


@dataclass(frozen=True)
class Par(Node):
    children: tuple[Node, ...]
    name: str | None = None
    key: str = ""


@dataclass(frozen=True)
class Branch(Node):
    """Exactly one child runs per request.

    ``by == "class"``: ``labels`` are request classes. ``by == "probability"``:
    ``weights`` must sum to 1.
    """

    by: str
    children: tuple[Node, ...]
    weights: tuple[float, ...] = ()
    labels: tuple[str, ...] = ()
    name: str | None = None
    key: str = ""


@dataclass(frozen=True)
class Tier:
    component: str
    yield_model: YieldModel
    data_volume: float | None = None


@dataclass(frozen=True)
class Tiered(Node):
    tiers: tuple[Tier, ...]
    quota: int
    name: str | None = None
    key: str = ""

    @property
    def children(self) -> tuple[Node, ...]:
        return tuple(Leaf(t.component, key=t.component) for t in self.tiers)


@dataclass(frozen=True)
class Topology:
    components: tuple[ComponentSpec, ...]
    root: Node
    entry: str
    modules: tuple[tuple[str, Node], ...] = ()
    edge_delay_ms: float = 0.0

    def component(self, cid: str) -> ComponentSpec:
        for c in self.components:
            if c.id == cid:
                return c
        raise UnknownNodeId(f"unknown component {cid!r}", cid)

    @property
    def component_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.components)

    def walk(self) -> Iterator[Node]:
        """Pre-order traversal of the (validated) tree; tiers appear as leaves."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not isinstance(node, Leaf):
                stack.extend(reversed(node.children))

    def node_keys(self) -> list[str]:
        return [n.key for n in self.walk()]

    def leaf_ids(self) -> list[str]:
        return [n.id for n in self.walk() if isinstance(n, Leaf)]

    def module_names(self) -> list[str]:
        return [n.name for n in self.walk() if not isinstance(n, Leaf) and n.name]


def node_kind(node: Node) -> str:
    return {Leaf: "station", Seq: "seq", Par: "par", Branch: "branch", Tiered: "tiered"}[type(node)]


# ------------------------------------------------------------- validation


def validate_topology(raw: Topology) -> Topology:
    """Check every topology invariant and return the canonical form.

    Module references are expanded, every tree node gets a stable ``key``
    (component id for leaves, module name or ``<kind>#<preorder index>`` for
    composites) and components are sorted by id. Idempotent.
    """
    if not raw.components:
        raise EmptyTopology("topology defines no components")
    ids = [c.id for c in raw.components]
    seen: set[str] = set()
    for cid in ids:
        if cid in seen:
            raise DuplicateNodeUse(f"component id {cid!r} defined twice", cid)
        seen.add(cid)
    modules = dict(raw.modules)
    clash = seen & set(modules)
    if clash:
        name = sorted(clash)[0]
        raise DuplicateNodeUse(f"{name!r} is both a component and a module", name)
    if raw.edge_delay_ms < 0:
        raise TopologyError("edge delay must be >= 0")

    counter = [0]
    used: set[str] = set()

    def resolve(node: Node, stack: tuple[str, ...], name: str | None = None) -> Node:
        if isinstance(node, Ref):
            if node.name in stack:
                raise CycleDetected(
                    "module cycle: " + " -> ".join(stack + (node.name,)), node.name
                )
            if node.name in seen:
                return resolve(Leaf(node.name), stack)
            if node.name not in modules:
                raise UnknownNodeId(f"unknown node id {node.name!r}", node.name)
            return resolve(modules[node.name], stack + (node.name,), node.name)
        idx = counter[0]
        counter[0] += 1
        if isinstance(node, Leaf):
            if node.id not in seen:
                if node.id in modules:
                    counter[0] -= 1
                    return resolve(Ref(node.id), stack)
                raise UnknownNodeId(f"unknown node id {node.id!r}", node.id)
            _claim(node.id)
            return Leaf(node.id, key=node.id)
        name = name or node.name
        key = name or f"{node_kind(node)}#{idx}"
        if isinstance(node, Tiered):
            if node.quota < 1:
                raise TopologyError(f"tiered {key!r}: quota must be >= 1", key)
            if not node.tiers:
                raise EmptyTopology(f"tiered {key!r} has no tiers", key)
            for t in node.tiers:
                if t.component not in seen:
                    raise UnknownNodeId(f"unknown node id {t.component!r}", t.component)
                _claim(t.component)
            counter[0] += len(node.tiers)
            return replace(node, name=name, key=key)
        if not node.children:
            raise EmptyTopology(f"{key!r} has no children", key)
        children = tuple(resolve(c, stack) for c in node.children)
        if isinstance(node, Branch):
            if node.by == "probability":
                if len(node.weights) != len(children) or any(w < 0 for w in node.weights):
                    raise BranchWeightSumInvalid(f"branch {key!r}: one weight >= 0 per child", key)
                total = math.fsum(node.weights)
                if abs(total - 1.0) > BRANCH_WEIGHT_TOL:
                    raise BranchWeightSumInvalid(
                        f"branch {key!r}: weights sum to {total:g}, expected 1", key
                    )
            elif node.by == "class":
                labels = tuple(node.labels)
                valid = {c.value for c in RequestClass}
                if len(labels) != len(children) or len(set(labels)) != len(labels) or not set(labels) <= valid:
                    raise TopologyError(f"branch {key!r}: class labels must be distinct text/image", key)
                if set(labels) != valid:
                    raise TopologyError(f"branch {key!r}: both text and image need a child", key)
            else:
                raise TopologyError(f"branch {key!r}: unknown branch mode {node.by!r}", key)
        return replace(node, children=children, name=name, key=key)

    def _claim(cid: str) -> None:
        if cid in used:
            raise DuplicateNodeUse(f"component {cid!r} appears twice in the tree", cid)
        used.add(cid)

    root = resolve(raw.root, ())
    # Expanded modules are kept only so the topology can be re-validated.
    expanded = tuple(sorted(modules.items()))
    entry = _first_leaf(root)
    if not raw.entry:
        # Default: the first station the tree executes.
        if entry is None:
            raise InvalidEntry("the tree does not start with a single station; cannot pick an entry", "")
        raw = replace(raw, entry=entry)
    if raw.entry not in seen:
        raise UnknownNodeId(f"unknown entry node {raw.entry!r}", raw.entry)
    if entry != raw.entry:
        raise InvalidEntry(
            f"entry {raw.entry!r} must be the first station executed (found {entry!r})", raw.entry
        )
    comps = tuple(sorted(raw.components, key=lambda c: c.id))
    return Topology(comps, root, raw.entry, expanded, raw.edge_delay_ms)


def _first_leaf(node: Node) -> str | None:
    if isinstance(node, Leaf):
        return node.id
    if isinstance(node, Seq):
        return _first_leaf(node.children[0])
    return None


# ---------------------------------------------------------------- traces


@dataclass(slots=True)
class Span:
    component_id: str
    enqueue_time: int
    start_time: int
    end_time: int
    children: list["Span"] = field(default_factory=list)
    kind: str = "station"

    @property
    def duration(self) -> int:
        return self.end_time - self.enqueue_time

    @property
    def service(self) -> int:
        return self.end_time - self.start_time

    def iter(self) -> Iterator["Span"]:
        yield self
        for c in self.children:
            yield from c.iter()

    def to_dict(self) -> dict:
        d = {
            "component_id": self.component_id,
            "kind": self.kind,
            "enqueue_ns": self.enqueue_time,
            "start_ns": self.start_time,
            "end_ns": self.end_time,
        }
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Span":
        return cls(
            d["component_id"],
            d["enqueue_ns"],
            d["start_ns"],
            d["end_ns"],
            [cls.from_dict(c) for c in d.get("children", ())],
            d.get("kind", "station"),
        )


@dataclass(slots=True)
class RequestTrace:
    request_id: int
    cls: RequestClass
    arrival_time: int
    completion_time: int
    root_span: Span | None
    quality_achieved: float | None = None
    send_time: int | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {
            "request_id": self.request_id,
            "class": self.cls.value,
            "arrival_ns": self.arrival_time,
            "completion_ns": self.completion_time,
        }
        if self.send_time is not None:
            d["send_ns"] = self.send_time
        if self.quality_achieved is not None:
            d["quality_achieved"] = self.quality_achieved
        if self.flags:
            d["flags"] = list(self.flags)
        d["root_span"] = self.root_span.to_dict() if self.root_span else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RequestTrace":
        return cls(
            d["request_id"],
            RequestClass(d["class"]),
            d["arrival_ns"],
            d["completion_ns"],
            Span.from_dict(d["root_span"]) if d.get("root_span") else None,
            d.get("quality_achieved"),
            d.get("send_ns"),
            tuple(d.get("flags", ())),
        )


def end_to_end_latency(trace: RequestTrace) -> int:
    return trace.completion_time - trace.arrival_time


def check_span(span: Span) -> None:
    """Raise MalformedSpanTree unless timestamps are ordered and children nest."""
    if not span.enqueue_time <= span.start_time <= span.end_time:
        raise MalformedSpanTree(
            f"span {span.component_id!r}: need enqueue <= start <= end, got "
            f"{span.enqueue_time}/{span.start_time}/{span.end_time}"
        )
    for c in span.children:
        if c.enqueue_time < span.start_time or c.end_time > span.end_time:
            raise MalformedSpanTree(
                f"span {c.component_id!r} escapes parent {span.component_id!r}"
            )
        check_span(c)


def critical_path(trace: RequestTrace | Span) -> int:
    """Length of the critical path through a span tree (ns).

    Sequential composites add their children, parallel ones take the max;
    a station contributes ``end - enqueue``.
    """
    span = trace.root_span if isinstance(trace, RequestTrace) else trace
    if span is None:
        return 0
    check_span(span)
    return _cp(span)


def _cp(span: Span) -> int:
    if span.kind == "station" or not span.children:
        return span.duration if span.kind == "station" else 0
    parts = [_cp(c) for c in span.children]
    if span.kind == "par":
        return max(parts)
    return sum(parts)


def iter_leaf_spans(spans: Sequence[Span]) -> Iterator[Span]:
    for s in spans:
        for x in s.iter():
            if x.kind == "station":
                yield x
