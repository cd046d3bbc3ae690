"""Percentiles, latency breakdowns, tail amplification, quality gating and
latency-bounded throughput over measured trace sets.

Percentiles use the nearest-rank convention: the ``ceil(p/100 * n)``-th
smallest sample. Above ``histogram_cap`` samples a log-bucketed histogram
(1 % relative error) stands in for the exact sample pool.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Iterable, Sequence

import numpy as np

from ebf.core import NS_PER_MS, Leaf, QualityAttr, Topology
from ebf.traceset import TraceSet

DEFAULT_PERCENTILES = (50.0, 90.0, 99.0, 99.9)
DEFAULT_HISTOGRAM_CAP = 5_000_000
PERCENTILE_METHOD = "nearest-rank"


class EmptySamples(ValueError):
    pass


class NodeNotFound(KeyError):
    pass


class ZeroComponentTail(ValueError):
    pass


class MissingQualityData(ValueError):
    pass


class EmptySweep(ValueError):
    pass


class NoneSustains(ValueError):
    """Even the smallest offered load violates the latency bound."""


def nearest_rank(p: float, n: int) -> int:
    """1-based rank ``ceil(p/100 * n)``, computed in decimal to dodge 0.1-style float error."""
    if not 0 < p <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {p}")
    rank = math.ceil(Decimal(repr(float(p))) * n / 100)
    return min(max(rank, 1), n)


def percentile(samples, p: float):
    """Nearest-rank ``p``-th percentile of a non-empty multiset."""
    arr = np.asarray(samples)
    n = arr.size
    if n == 0:
        raise EmptySamples("percentile of an empty sample set")
    k = nearest_rank(p, n) - 1
    return np.partition(arr.ravel(), k)[k].item()


def percentiles(samples, ps: Iterable[float]) -> dict[float, float]:
    arr = np.asarray(samples).ravel()
    if arr.size == 0:
        raise EmptySamples("percentile of an empty sample set")
    ps = list(ps)
    ks = sorted({nearest_rank(p, arr.size) - 1 for p in ps})
    part = np.partition(arr, ks)
    return {p: part[nearest_rank(p, arr.size) - 1].item() for p in ps}


class LogHistogram:
    """Fixed-resolution histogram of positive integers (ns).

    Bucket ``i`` spans ``[g**i, g**(i+1))`` with ``g = (1+e)/(1-e)`` and
    reports ``g**i * (1+e)``, which is within relative error ``e`` of every
    value in the bucket.
    """

    def __init__(self, rel_error: float = 0.01):
        self.rel_error = rel_error
        self.gamma = (1 + rel_error) / (1 - rel_error)
        self._log_gamma = math.log(self.gamma)
        self.counts: dict[int, int] = {}
        self.total = 0

    def _index(self, values: np.ndarray) -> np.ndarray:
        return np.floor(np.log(np.maximum(values, 1)) / self._log_gamma).astype(np.int64)

    def record(self, values) -> None:
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            return
        idx, cnt = np.unique(self._index(v), return_counts=True)
        for i, c in zip(idx.tolist(), cnt.tolist()):
            self.counts[i] = self.counts.get(i, 0) + c
        self.total += int(v.size)

    def merge(self, other: "LogHistogram") -> None:
        if other.gamma != self.gamma:
            raise ValueError("cannot merge histograms of different resolution")
        for i, c in other.counts.items():
            self.counts[i] = self.counts.get(i, 0) + c
        self.total += other.total

    def value_at(self, p: float) -> float:
        if self.total == 0:
            raise EmptySamples("percentile of an empty histogram")
        rank = nearest_rank(p, self.total)
        acc = 0
        for i in sorted(self.counts):
            acc += self.counts[i]
            if acc >= rank:
                return self.gamma**i * (1 + self.rel_error)
        raise AssertionError("unreachable")


def summarize(samples_ns: np.ndarray, ps: Sequence[float], cap: int = DEFAULT_HISTOGRAM_CAP) -> dict:
    """count/mean/percentiles (ms) with exact ranks below ``cap`` samples."""
    arr = np.asarray(samples_ns)
    out = {"count": int(arr.size)}
    if arr.size == 0:
        return out
    out["mean_ms"] = float(arr.mean()) / NS_PER_MS
    if arr.size <= cap:
        vals = percentiles(arr, ps)
        out["method"] = PERCENTILE_METHOD
    else:
        h = LogHistogram()
        h.record(arr)
        vals = {p: h.value_at(p) for p in ps}
        out["method"] = f"log-histogram({h.rel_error:g})"
    out["percentiles_ms"] = {_pkey(p): float(v) / NS_PER_MS for p, v in vals.items()}
    return out


def _pkey(p: float) -> str:
    return f"p{p:g}"


# -------------------------------------------------------------- breakdown


@dataclass
class BreakdownRow:
    node: str
    level: str
    count: int
    mean_ms: float
    p90_ms: float
    p99_ms: float
    share: float
    service_mean_ms: float
    service_p99_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_traceset(traces, topology: Topology | None = None) -> TraceSet:
    if isinstance(traces, TraceSet):
        return traces
    traces = list(traces)
    if topology is None:
        raise ValueError("a topology is needed to analyse plain RequestTrace lists")
    return TraceSet.from_traces(topology, traces)


def module_keys(topology: Topology) -> list[str]:
    """Top-level modules: named composites plus stations outside any named composite."""
    out: list[str] = []

    def walk(node, inside: bool) -> None:
        if isinstance(node, Leaf):
            if not inside:
                out.append(node.key)
            return
        named = bool(node.name) and node is not topology.root
        if named and not inside:
            out.append(node.key)
        for c in node.children:
            walk(c, inside or named)

    walk(topology.root, False)
    return out


def breakdown(traces, level: str = "component", topology: Topology | None = None,
              cap: int = DEFAULT_HISTOGRAM_CAP) -> list[BreakdownRow]:
    """Per-node latency rows; share = node mean / end-to-end mean.

    ``level="component"`` lists every station; ``"module"`` lists named
    composites and stray stations at the top of the tree.
    """
    ts = _as_traceset(traces, topology)
    topo = ts.topology
    if level == "component":
        keys = [k for k in topo.node_keys() if k in topo.component_ids]
    elif level == "module":
        keys = module_keys(topo)
    else:
        raise ValueError(f"level must be 'module' or 'component', got {level!r}")
    e2e_mean = float(ts.e2e().mean()) if len(ts) else math.nan
    rows = []
    for key in keys:
        lat = ts.node_latency(key)
        svc = ts.node_latency(key, service_only=True)
        if lat.size == 0:
            rows.append(BreakdownRow(key, level, 0, *([math.nan] * 6)))
            continue
        ps = _pct(lat, (90.0, 99.0), cap)
        mean = float(lat.mean())
        rows.append(
            BreakdownRow(
                key,
                level,
                int(lat.size),
                mean / NS_PER_MS,
                ps[90.0] / NS_PER_MS,
                ps[99.0] / NS_PER_MS,
                # Mean over all requests so skipped branches weigh in correctly.
                float(lat.sum()) / len(ts) / e2e_mean if e2e_mean else math.nan,
                float(svc.mean()) / NS_PER_MS,
                _pct(svc, (99.0,), cap)[99.0] / NS_PER_MS,
            )
        )
    return rows


def _pct(arr: np.ndarray, ps, cap: int) -> dict[float, float]:
    if arr.size <= cap:
        return {p: float(v) for p, v in percentiles(arr, ps).items()}
    h = LogHistogram()
    h.record(arr)
    return {p: h.value_at(p) for p in ps}


def amplification(traces, node_id: str, topology: Topology | None = None, p: float = 99.0) -> float:
    """Ratio of end-to-end p99 to the p99 of ``node_id``'s spans."""
    ts = _as_traceset(traces, topology)
    if node_id not in ts.nodes:
        raise NodeNotFound(node_id)
    lat = ts.node_latency(node_id)
    if lat.size == 0:
        raise NodeNotFound(f"{node_id!r} has no spans")
    tail = percentile(lat, p)
    if tail <= 0:
        raise ZeroComponentTail(node_id)
    return percentile(ts.e2e(), p) / tail


# ------------------------------------------------------------- quality


@dataclass
class QualityVerdict:
    passed: bool
    achieved: float
    threshold: float
    stats: dict | None = None


def quality_ensured(traces, attr: QualityAttr, tolerance: float = 0.02,
                    topology: Topology | None = None, ps: Sequence[float] = DEFAULT_PERCENTILES) -> QualityVerdict:
    """Pass iff achieved quality >= target * (1 - tolerance); stats only on pass.

    Achieved quality is ``attr.achieved`` when set, else the mean of the
    traces' ``quality_achieved``.
    """
    if attr.achieved is not None:
        achieved = attr.achieved
        ts = _as_traceset(traces, topology) if traces is not None else None
    else:
        ts = _as_traceset(traces, topology)
        q = ts.quality[~np.isnan(ts.quality)]
        if q.size == 0:
            raise MissingQualityData("traces carry no quality_achieved values")
        achieved = float(q.mean())
    threshold = attr.target * (1 - tolerance)
    # Decimal comparison so the exact boundary (e.g. 0.93 * 0.98) passes.
    passed = Decimal(repr(achieved)) >= Decimal(repr(attr.target)) * (1 - Decimal(repr(tolerance)))
    stats = summarize(ts.e2e(), ps) if passed and ts is not None and len(ts) else None
    return QualityVerdict(passed, achieved, threshold, stats)


# ------------------------------------------------------------ throughput


def latency_bounded_throughput(sweep: Sequence[tuple[float, float]], bound: float) -> float:
    """Largest offered rate whose measured p99 stays within ``bound``.

    ``sweep`` is a list of (rate, p99) sorted by rate.
    """
    if not sweep:
        raise EmptySweep("no sweep points")
    rates = [r for r, _ in sweep]
    if rates != sorted(rates):
        raise ValueError("sweep must be sorted by offered rate")
    ok = [r for r, p99 in sweep if p99 <= bound]
    if not ok:
        raise NoneSustains(f"no offered rate keeps p99 within {bound}")
    return max(ok)


# --------------------------------------------------------------- report


@dataclass
class LatencyReport:
    count: int
    mean_ms: float
    percentiles_ms: dict[str, float]
    breakdown: list[BreakdownRow]
    modules: list[BreakdownRow]
    amplification: dict[str, float]
    error_count: int = 0
    timeout_count: int = 0
    warmup_discarded: int = 0
    offered_rate_per_s: float | None = None
    from_send: dict | None = None
    flags: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def p99_ms(self) -> float:
        return self.percentiles_ms["p99"]

    def to_dict(self) -> dict:
        d = {
            "count": self.count,
            "mean_ms": self.mean_ms,
            "percentiles_ms": self.percentiles_ms,
            "breakdown": [r.to_dict() for r in self.breakdown],
            "modules": [r.to_dict() for r in self.modules],
            "amplification": self.amplification,
            "error_count": self.error_count,
            "timeout_count": self.timeout_count,
            "warmup_discarded": self.warmup_discarded,
            "flags": self.flags,
            "metadata": self.metadata,
        }
        if self.offered_rate_per_s is not None:
            d["offered_rate_per_s"] = self.offered_rate_per_s
        if self.from_send is not None:
            d["from_send"] = self.from_send
        return d


def latency_report(
    traces,
    *,
    topology: Topology | None = None,
    ps: Sequence[float] = DEFAULT_PERCENTILES,
    cap: int = DEFAULT_HISTOGRAM_CAP,
    warmup_discarded: int = 0,
    error_count: int = 0,
    timeout_count: int = 0,
    offered_rate: float | None = None,
    metadata: dict | None = None,
) -> LatencyReport:
    ts = _as_traceset(traces, topology)
    meta = {"percentile_method": PERCENTILE_METHOD, **(metadata or {})}
    flags = []
    ps = tuple(sorted(set(ps) | {50.0, 90.0, 99.0, 99.9}))
    if len(ts) == 0:
        flags.append("empty_measured_set")
        return LatencyReport(0, math.nan, {}, [], [], {}, error_count, timeout_count,
                             warmup_discarded, offered_rate, None, flags, meta)
    e2e = ts.e2e()
    s = summarize(e2e, ps, cap)
    meta["percentile_method"] = s["method"]
    amp = {}
    for key in ts.topology.component_ids:
        if key in ts.nodes and ts.nodes[key].visited.any():
            try:
                amp[key] = amplification(ts, key)
            except ZeroComponentTail:
                continue
    from_send = None
    if ts.send is not None:
        s2 = summarize(ts.e2e(from_send=True), ps, cap)
        from_send = {"mean_ms": s2["mean_ms"], "percentiles_ms": s2["percentiles_ms"]}
    if np.any(ts.flags):
        flags.append(f"quota_unreachable:{int(np.count_nonzero(ts.flags))}")
    return LatencyReport(
        len(ts),
        s["mean_ms"],
        s["percentiles_ms"],
        breakdown(ts, "component", cap=cap),
        breakdown(ts, "module", cap=cap),
        amp,
        error_count,
        timeout_count,
        warmup_discarded,
        offered_rate,
        from_send,
        flags,
        meta,
    )


def breakdown_csv(rows: Sequence[BreakdownRow]) -> str:
    import csv
    import io

    buf = io.StringIO()
    fields = list(BreakdownRow.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.to_dict())
    return buf.getvalue()

