"""Columnar storage for the measured requests of one run.

Simulations produce millions of requests; keeping one numpy column per tree
node (enqueue/start/end, ``-1`` when the request skipped that node) keeps
analytics vectorised. :class:`~ebf.core.RequestTrace` objects are built on
demand and can be turned back into columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ebf.core import Leaf, Node, RequestClass, RequestTrace, Span, Topology, node_kind

FLAG_QUOTA_UNREACHABLE = 1
_FLAG_NAMES = {FLAG_QUOTA_UNREACHABLE: "quota_unreachable"}


@dataclass
class NodeColumns:
    enqueue: np.ndarray
    start: np.ndarray
    end: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "NodeColumns":
        return cls(*(np.full(n, -1, dtype=np.int64) for _ in range(3)))

    def take(self, idx) -> "NodeColumns":
        return NodeColumns(self.enqueue[idx], self.start[idx], self.end[idx])

    @property
    def visited(self) -> np.ndarray:
        return self.end >= 0


@dataclass
class TraceSet:
    topology: Topology
    request_id: np.ndarray
    cls: np.ndarray
    arrival: np.ndarray
    completion: np.ndarray
    nodes: dict[str, NodeColumns]
    quality: np.ndarray = None
    flags: np.ndarray = None
    send: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.request_id)
        if self.quality is None:
            self.quality = np.full(n, np.nan)
        if self.flags is None:
            self.flags = np.zeros(n, dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.request_id)

    def e2e(self, from_send: bool = False) -> np.ndarray:
        """End-to-end latency in ns, from scheduled arrival (default) or actual send."""
        base = self.send if (from_send and self.send is not None) else self.arrival
        return self.completion - base

    def node_latency(self, key: str, service_only: bool = False) -> np.ndarray:
        """Per-visit durations at node ``key``: end - enqueue (or end - start)."""
        col = self.nodes[key]
        m = col.visited
        return col.end[m] - (col.start[m] if service_only else col.enqueue[m])

    def take(self, idx) -> "TraceSet":
        return TraceSet(
            self.topology,
            self.request_id[idx],
            self.cls[idx],
            self.arrival[idx],
            self.completion[idx],
            {k: v.take(idx) for k, v in self.nodes.items()},
            self.quality[idx],
            self.flags[idx],
            None if self.send is None else self.send[idx],
            dict(self.meta),
        )

    # ----------------------------------------------------- object view

    def trace(self, i: int) -> RequestTrace:
        root = _build_span(self.topology.root, self.nodes, i)
        flags = tuple(name for bit, name in _FLAG_NAMES.items() if int(self.flags[i]) & bit)
        q = float(self.quality[i])
        return RequestTrace(
            int(self.request_id[i]),
            RequestClass.from_code(int(self.cls[i])),
            int(self.arrival[i]),
            int(self.completion[i]),
            root,
            None if np.isnan(q) else q,
            None if self.send is None else int(self.send[i]),
            flags,
        )

    def traces(self) -> Iterator[RequestTrace]:
        for i in range(len(self)):
            yield self.trace(i)

    @classmethod
    def from_traces(cls, topology: Topology, traces: Iterable[RequestTrace]) -> "TraceSet":
        traces = sorted(traces, key=lambda t: t.request_id)
        n = len(traces)
        nodes = {k: NodeColumns.empty(n) for k in topology.node_keys()}
        send = None
        if any(t.send_time is not None for t in traces):
            send = np.array([t.send_time if t.send_time is not None else t.arrival_time for t in traces], dtype=np.int64)
        flags = np.zeros(n, dtype=np.uint8)
        for i, t in enumerate(traces):
            if t.root_span is not None:
                for s in t.root_span.iter():
                    col = nodes.get(s.component_id)
                    if col is not None:
                        col.enqueue[i], col.start[i], col.end[i] = s.enqueue_time, s.start_time, s.end_time
            for bit, name in _FLAG_NAMES.items():
                if name in t.flags:
                    flags[i] |= bit
        return cls(
            topology,
            np.array([t.request_id for t in traces], dtype=np.int64),
            np.array([t.cls.code for t in traces], dtype=np.int8),
            np.array([t.arrival_time for t in traces], dtype=np.int64),
            np.array([t.completion_time for t in traces], dtype=np.int64),
            nodes,
            np.array([np.nan if t.quality_achieved is None else t.quality_achieved for t in traces]),
            flags,
            send,
        )

    def write_jsonl(self, path: str | Path) -> None:
        """One JSON object per request, ordered by request id."""
        with open(path, "w") as fh:
            for t in self.traces():
                fh.write(json.dumps(t.to_dict(), separators=(",", ":")))
                fh.write("\n")


def read_jsonl(path: str | Path) -> list[RequestTrace]:
    with open(path) as fh:
        return [RequestTrace.from_dict(json.loads(line)) for line in fh if line.strip()]


def _build_span(node: Node, nodes: dict[str, NodeColumns], i: int) -> Span | None:
    col = nodes[node.key]
    if col.end[i] < 0:
        return None
    span = Span(node.key, int(col.enqueue[i]), int(col.start[i]), int(col.end[i]), kind=node_kind(node))
    if not isinstance(node, Leaf):
        for child in node.children:
            s = _build_span(child, nodes, i)
            if s is not None:
                span.children.append(s)
    return span

