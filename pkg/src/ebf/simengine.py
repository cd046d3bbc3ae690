"""Deterministic discrete-event simulation of a topology under a workload.

Two engines share one source of randomness (per-request draw tables keyed
by request id), so for the same inputs they emit the same traces:

* ``feedforward`` sweeps the composition tree station by station over whole
  request vectors; each station is a FIFO k-server recursion run by the
  compiled core. Open-loop workloads only.
* ``events`` is a classic heap-ordered event loop with callbacks; it handles
  closed-loop users, where arrivals depend on completions.
"""

from __future__ import annotations

import heapq
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ebf import _accel
from ebf.core import (
    NS_PER_MS,
    NS_PER_S,
    Branch,
    Leaf,
    Node,
    Par,
    RequestClass,
    Seq,
    Span,
    Tier,
    Tiered,
    Topology,
    to_ns,
)
from ebf.traceset import FLAG_QUOTA_UNREACHABLE, NodeColumns, TraceSet
from ebf.workload import (
    ClosedLoop,
    OpenLoop,
    StopAfterDuration,
    StopAfterRequests,
    WorkloadSpec,
    closed_loop_users,
    next_closed_loop_arrival,
    open_loop_arrays,
    substream,
)

UTILIZATION_LIMIT = 0.98
_BLOCK = 1 << 14


class UnstableSystemWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TrainingLoad:
    """Periodic model updates that occupy one server of ``station``."""

    station: str
    interval_s: float
    cost_s: float

    def times(self, horizon_ns: int) -> np.ndarray:
        step = int(round(self.interval_s * NS_PER_S))
        if step <= 0 or horizon_ns < step:
            return np.zeros(0, dtype=np.int64)
        return np.arange(step, horizon_ns + 1, step, dtype=np.int64)

    @property
    def cost_ns(self) -> int:
        return max(1, int(round(self.cost_s * NS_PER_S)))


@dataclass
class RunStats:
    engine: str
    injected: int = 0
    completed: int = 0
    in_flight: int = 0
    discarded_warmup: int = 0
    horizon_ns: int = 0
    utilization: dict[str, float] = field(default_factory=dict)
    quota_unreachable: int = 0
    training_updates: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def conserved(self) -> bool:
        return self.injected == self.completed + self.in_flight + self.discarded_warmup

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "injected": self.injected,
            "completed": self.completed,
            "in_flight": self.in_flight,
            "discarded_warmup": self.discarded_warmup,
            "horizon_ms": self.horizon_ns / NS_PER_MS,
            "utilization": dict(sorted(self.utilization.items())),
            "quota_unreachable": self.quota_unreachable,
            "training_updates": self.training_updates,
            "warnings": list(self.warnings),
        }


@dataclass
class SimResult:
    traces: TraceSet
    stats: RunStats


# ------------------------------------------------------------ randomness


class DrawTable:
    """Lazily extended per-request draws from one named substream.

    Values are generated in fixed-size blocks, so entry ``i`` is the same
    whether the caller asks for it in bulk or one at a time.
    """

    def __init__(self, rng: np.random.Generator, fn: Callable[[np.random.Generator, int], np.ndarray]):
        self._rng = rng
        self._fn = fn
        self._blocks: list[np.ndarray] = []
        self._list: list = []

    def _grow(self, n: int) -> None:
        while len(self._list) < n:
            block = self._fn(self._rng, _BLOCK)
            self._blocks.append(block)
            self._list.extend(block.tolist())

    def take(self, n: int) -> np.ndarray:
        self._grow(n)
        if not self._blocks:
            return self._fn(self._rng, 0)
        return np.concatenate(self._blocks)[:n]

    def __getitem__(self, i: int):
        if i >= len(self._list):
            self._grow(i + 1)
        return self._list[i]


class RequestDraws:
    """All per-request randomness of a run, keyed by component/node."""

    def __init__(self, topology: Topology, seed: int):
        self.service: dict[str, DrawTable] = {}
        for comp in topology.components:
            model = comp.service_model
            self.service[comp.id] = DrawTable(
                substream(seed, f"svc:{comp.id}"), lambda rng, n, m=model: to_ns(m.draw(rng, n))
            )
        self.branch: dict[str, DrawTable] = {}
        self.yields: dict[str, DrawTable] = {}
        for node in topology.walk():
            if isinstance(node, Branch) and node.by == "probability":
                self.branch[node.key] = DrawTable(substream(seed, f"branch:{node.key}"), lambda rng, n: rng.random(n))
            elif isinstance(node, Tiered):
                for t in node.tiers:
                    self.yields[t.component] = DrawTable(
                        substream(seed, f"yield:{t.component}"), lambda rng, n, y=t.yield_model: y.draw(rng, n)
                    )


def resolve_branch(branch: Branch, cls: RequestClass | int, u: float | None = None) -> int:
    """Index of the child that runs: by request class, or by ``u`` ~ U[0,1)."""
    if branch.by == "class":
        label = RequestClass.from_code(cls).value if isinstance(cls, (int, np.integer)) else RequestClass(cls).value
        return branch.labels.index(label)
    acc = 0.0
    for i, w in enumerate(branch.weights):
        acc += w
        if u < acc:
            return i
    return len(branch.weights) - 1


def branch_choices(branch: Branch, cls_codes: np.ndarray, uniforms: np.ndarray | None) -> np.ndarray:
    """Vectorised :func:`resolve_branch`."""
    if branch.by == "class":
        lut = np.array([branch.labels.index(RequestClass.from_code(c).value) for c in (0, 1)])
        return lut[cls_codes.astype(np.int64)]
    edges = np.cumsum(branch.weights)
    idx = np.searchsorted(edges, uniforms, side="right")
    return np.minimum(idx, len(branch.weights) - 1)


@dataclass
class TieredOutcome:
    spans: list[Span]
    results: int
    quota_unreachable: bool
    end_time: int


def execute_tiered_search(
    tiers: Sequence[Tier],
    quota: int,
    ready: int,
    probe: Callable[[int, int], tuple[Span, int]],
) -> TieredOutcome:
    """Probe tiers in order until ``quota`` results are collected.

    ``probe(i, t)`` runs tier ``i`` starting at ``t`` and returns its span
    and result count. Tiers after the stopping point produce no spans.
    """
    spans: list[Span] = []
    total = 0
    t = ready
    for i in range(len(tiers)):
        if total >= quota:
            break
        span, got = probe(i, t)
        spans.append(span)
        total += got
        t = span.end_time
    return TieredOutcome(spans, total, total < quota, t)


# --------------------------------------------------------------- run API


def run(
    topology: Topology,
    workload: WorkloadSpec,
    seed: int | None = None,
    *,
    training: TrainingLoad | None = None,
    engine: str = "auto",
) -> SimResult:
    """Simulate ``workload`` against ``topology``.

    ``seed`` drives service/branch/yield draws (defaults to the workload
    seed). ``engine`` is ``auto``, ``feedforward`` or ``events``.
    """
    seed = workload.seed if seed is None else seed
    if training is not None:
        topology.component(training.station)
    if engine == "auto":
        engine = "feedforward" if isinstance(workload.mode, OpenLoop) else "events"
    if engine == "feedforward":
        if not isinstance(workload.mode, OpenLoop):
            raise ValueError("the feed-forward engine needs an open-loop workload")
        result = _FeedForward(topology, workload, seed, training).run()
    elif engine == "events":
        result = _EventEngine(topology, workload, seed, training).run()
    else:
        raise ValueError(f"unknown engine {engine!r}")
    for msg in result.stats.warnings:
        warnings.warn(msg, UnstableSystemWarning, stacklevel=2)
    return result


def _utilization(
    topology: Topology, intervals: dict[str, tuple[np.ndarray, np.ndarray]], t0: int, t1: int
) -> tuple[dict[str, float], list[str]]:
    util: dict[str, float] = {}
    notes: list[str] = []
    window = t1 - t0
    for comp in topology.components:
        if comp.id not in intervals or window <= 0:
            continue
        starts, ends = intervals[comp.id]
        busy = np.clip(np.minimum(ends, t1) - np.maximum(starts, t0), 0, None).sum()
        u = float(busy) / (comp.servers * window)
        util[comp.id] = u
        if u > UTILIZATION_LIMIT:
            notes.append(f"station {comp.id!r} utilization {u:.3f} exceeds {UTILIZATION_LIMIT}")
    return util, notes


def _quality(topology: Topology, nodes: dict[str, NodeColumns], n: int) -> np.ndarray:
    q = np.full(n, np.nan)
    for comp in topology.components:
        if comp.quality is not None and comp.quality.achieved is not None and comp.id in nodes:
            seen = nodes[comp.id].visited
            q[seen] = np.fmin(q[seen], comp.quality.achieved)
    return q


# ------------------------------------------------------ feed-forward engine


class _FeedForward:
    def __init__(self, topology, workload, seed, training):
        self.topo = topology
        self.workload = workload
        self.draws = RequestDraws(topology, seed)
        self.training = training
        self.delay = int(round(topology.edge_delay_ms * NS_PER_MS))

    def run(self) -> SimResult:
        arrivals = open_loop_arrays(self.workload)
        n = len(arrivals)
        self.n = n
        self.cls = arrivals.cls
        self.cols = {k: NodeColumns.empty(n) for k in self.topo.node_keys()}
        self.flags = np.zeros(n, dtype=np.uint8)
        self.intervals: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.horizon_hint = int(arrivals.scheduled[-1]) if n else 0
        self.updates = 0
        done = self._visit(self.topo.root, arrivals.scheduled.copy(), np.ones(n, dtype=bool))

        warm = self.workload.warmup_ns
        measured = arrivals.scheduled >= warm
        horizon = int(done.max()) if n else 0
        stats = RunStats("feedforward", injected=n, completed=int(measured.sum()),
                         discarded_warmup=int((~measured).sum()), horizon_ns=horizon)
        idx = np.flatnonzero(measured)
        t1 = int(arrivals.scheduled[-1]) if n else 0
        stats.utilization, stats.warnings = _utilization(self.topo, self.intervals, warm, t1)
        stats.quota_unreachable = int(np.count_nonzero(self.flags[idx] & FLAG_QUOTA_UNREACHABLE))
        stats.training_updates = self.updates
        quality = _quality(self.topo, self.cols, n)
        ts = TraceSet(
            self.topo,
            idx.astype(np.int64),
            arrivals.cls[idx],
            arrivals.scheduled[idx],
            done[idx],
            {k: v.take(idx) for k, v in self.cols.items()},
            quality[idx],
            self.flags[idx],
        )
        return SimResult(ts, stats)

    def _visit(self, node: Node, ready: np.ndarray, active: np.ndarray) -> np.ndarray:
        if isinstance(node, Leaf):
            return self._station(node.id, ready, active)
        done = ready.copy()
        if isinstance(node, Seq):
            for child in node.children:
                done = self._visit(child, done, active)
        elif isinstance(node, Par):
            outs = [self._visit(child, ready, active) for child in node.children]
            done = np.maximum.reduce(outs) if outs else done
        elif isinstance(node, Branch):
            u = self.draws.branch[node.key].take(self.n) if node.by == "probability" else None
            choice = branch_choices(node, self.cls, u)
            for i, child in enumerate(node.children):
                sub = active & (choice == i)
                if sub.any():
                    out = self._visit(child, ready, sub)
                    done[sub] = out[sub]
        elif isinstance(node, Tiered):
            got = np.zeros(self.n, dtype=np.int64)
            need = active.copy()
            for tier in node.tiers:
                if not need.any():
                    break
                out = self._station(tier.component, done, need)
                y = self.draws.yields[tier.component].take(self.n)
                done[need] = out[need]
                got[need] += y[need]
                need = need & (got < node.quota)
            self.flags[need] |= FLAG_QUOTA_UNREACHABLE
        col = self.cols[node.key]
        col.enqueue[active] = ready[active]
        col.start[active] = ready[active]
        col.end[active] = done[active]
        return done

    def _station(self, cid: str, ready: np.ndarray, active: np.ndarray) -> np.ndarray:
        comp = self.topo.component(cid)
        idx = np.flatnonzero(active)
        enq = ready[idx] + self.delay
        svc = self.draws.service[cid].take(self.n)[idx]
        ids = idx
        if self.training is not None and self.training.station == cid:
            extra = self.training.times(self.horizon_hint)
            self.updates = len(extra)
            enq = np.concatenate([enq, extra])
            svc = np.concatenate([svc, np.full(len(extra), self.training.cost_ns, dtype=np.int64)])
            ids = np.concatenate([idx, self.n + np.arange(len(extra))])
        order = np.lexsort((ids, enq))
        starts, ends = _accel.fifo_schedule(
            np.ascontiguousarray(enq[order]), np.ascontiguousarray(svc[order]), comp.servers
        )
        self.intervals[cid] = (starts, ends)
        real = ids[order] < self.n
        who = ids[order][real]
        col = self.cols[cid]
        col.enqueue[who] = enq[order][real]
        col.start[who] = starts[real]
        col.end[who] = ends[real]
        done = ready.copy()
        done[who] = ends[real]
        return done


# ------------------------------------------------------------ event engine


class _Station:
    __slots__ = ("servers", "busy", "queue", "starts", "ends")

    def __init__(self, servers: int):
        self.servers = servers
        self.busy = 0
        self.queue: deque = deque()
        self.starts: list[int] = []
        self.ends: list[int] = []


class _EventEngine:
    def __init__(self, topology, workload, seed, training):
        self.topo = topology
        self.workload = workload
        self.draws = RequestDraws(topology, seed)
        self.training = training
        self.delay = int(round(topology.edge_delay_ms * NS_PER_MS))
        self.stations = {c.id: _Station(c.servers) for c in topology.components}
        self.heap: list = []
        self.seq = 0
        self.now = 0
        self.rec: dict[str, dict[int, list[int]]] = {k: {} for k in topology.node_keys()}
        self.flags: dict[int, int] = {}

    def schedule(self, t: int, fn, *args) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, fn, args))

    # -- stations

    def arrive(self, cid: str, rid: int | None, t: int, cont) -> None:
        st = self.stations[cid]
        if rid is not None:
            self.rec[cid][rid] = [t, -1, -1]
        if st.busy < st.servers:
            self.begin(cid, st, rid, t, cont)
        else:
            st.queue.append((rid, cont))

    def begin(self, cid: str, st: _Station, rid, t: int, cont) -> None:
        st.busy += 1
        svc = self.training.cost_ns if rid is None else self.draws.service[cid][rid]
        if rid is not None:
            self.rec[cid][rid][1] = t
        st.starts.append(t)
        st.ends.append(t + svc)
        self.schedule(t + svc, self.depart, cid, rid, cont)

    def depart(self, cid: str, rid, cont) -> None:
        st = self.stations[cid]
        st.busy -= 1
        t = self.now
        if st.queue:
            nrid, ncont = st.queue.popleft()
            self.begin(cid, st, nrid, t, ncont)
        if rid is not None:
            self.rec[cid][rid][2] = t
        if cont is not None:
            cont(t)

    # -- composition tree

    def execute(self, node: Node, rid: int, cls: int, t: int, cont) -> None:
        if isinstance(node, Leaf):
            self.arrive(node.id, rid, t + self.delay, cont)
            return
        row = [t, t, -1]
        self.rec[node.key][rid] = row

        def finish(te: int) -> None:
            row[2] = te
            cont(te)

        if isinstance(node, Seq):
            children = node.children

            def step(i: int, tt: int) -> None:
                if i == len(children):
                    finish(tt)
                else:
                    self.execute(children[i], rid, cls, tt, lambda te: step(i + 1, te))

            step(0, t)
        elif isinstance(node, Par):
            pending = [len(node.children)]

            def join(te: int) -> None:
                pending[0] -= 1
                if pending[0] == 0:
                    finish(te)

            for child in node.children:
                self.execute(child, rid, cls, t, join)
        elif isinstance(node, Branch):
            u = self.draws.branch[node.key][rid] if node.by == "probability" else None
            self.execute(node.children[resolve_branch(node, cls, u)], rid, cls, t, finish)
        elif isinstance(node, Tiered):
            got = [0]

            def probe(i: int, tt: int) -> None:
                if got[0] >= node.quota:
                    finish(tt)
                    return
                if i == len(node.tiers):
                    self.flags[rid] = self.flags.get(rid, 0) | FLAG_QUOTA_UNREACHABLE
                    finish(tt)
                    return
                comp = node.tiers[i].component

                def after(te: int) -> None:
                    got[0] += int(self.draws.yields[comp][rid])
                    probe(i + 1, te)

                self.arrive(comp, rid, tt + self.delay, after)

            probe(0, t)

    # -- main loop

    def run(self) -> SimResult:
        wl = self.workload
        warm = wl.warmup_ns
        arrivals: dict[int, tuple[int, int]] = {}
        completions: dict[int, int] = {}
        measured: list[int] = []
        target = wl.stop.n if isinstance(wl.stop, StopAfterRequests) else None
        limit = int(round(wl.stop.seconds * NS_PER_S)) if isinstance(wl.stop, StopAfterDuration) else None
        state = {"stopped": False, "next_id": 0}
        closed = isinstance(wl.mode, ClosedLoop)
        users = closed_loop_users(wl) if closed else []

        def inject(rid: int, t: int, cls: int, user) -> None:
            arrivals[rid] = (t, cls)
            self.execute(self.topo.root, rid, cls, t, lambda te: complete(rid, te, user))

        def complete(rid: int, te: int, user) -> None:
            completions[rid] = te
            if arrivals[rid][0] >= warm and not state["stopped"]:
                measured.append(rid)
                if target is not None and closed and len(measured) >= target:
                    state["stopped"] = True
            if user is not None and not state["stopped"]:
                issue(user, te)

        def issue(user, t: int) -> None:
            rid = state["next_id"]
            ev = next_closed_loop_arrival(
                user, t, None, think_time_ms=wl.mode.think_time_ms,
                fraction_text=wl.fraction_text, request_id=rid,
            )
            if limit is not None and ev.scheduled_time >= limit:
                return
            state["next_id"] += 1
            self.schedule(ev.scheduled_time, inject, rid, ev.scheduled_time, ev.cls.code, user)

        if closed:
            if target != 0:
                for user in users:
                    issue(user, 0)
        else:
            stream = open_loop_arrays(wl)
            times = stream.scheduled.tolist()
            codes = stream.cls.tolist()
            for rid, (t, c) in enumerate(zip(times, codes)):
                self.schedule(t, inject, rid, t, c, None)
            state["next_id"] = len(times)

        updates = [0]
        if self.training is not None:
            step = max(1, int(round(self.training.interval_s * NS_PER_S)))
            last_open = int(stream.scheduled[-1]) if not closed and len(stream) else 0

            def update() -> None:
                if closed and limit is not None and self.now > limit:
                    return
                if not closed and self.now > last_open:
                    return
                updates[0] += 1
                self.arrive(self.training.station, None, self.now, None)
                self.schedule(self.now + step, update)

            self.schedule(step, update)

        heap = self.heap
        while heap and not state["stopped"]:
            t, _, fn, args = heapq.heappop(heap)
            if closed and limit is not None and t > limit:
                break
            self.now = t
            fn(*args)

        injected = len(arrivals)
        if not closed:
            measured = sorted(r for r in completions if arrivals[r][0] >= warm)
        measured.sort()
        discarded = sum(1 for r in completions if arrivals[r][0] < warm)
        stats = RunStats("events", injected=injected, completed=len(measured),
                         in_flight=injected - len(completions), discarded_warmup=discarded,
                         horizon_ns=self.now, training_updates=updates[0])
        intervals = {cid: (np.array(st.starts, dtype=np.int64), np.array(st.ends, dtype=np.int64))
                     for cid, st in self.stations.items()}
        if closed:
            t1 = self.now
        else:
            t1 = max((t for t, _ in arrivals.values()), default=0)
        stats.utilization, stats.warnings = _utilization(self.topo, intervals, warm, t1)

        n = len(measured)
        ids = np.array(measured, dtype=np.int64)
        nodes = {}
        for key, rows in self.rec.items():
            col = NodeColumns.empty(n)
            for i, rid in enumerate(measured):
                row = rows.get(rid)
                if row is not None:
                    col.enqueue[i], col.start[i], col.end[i] = row
            nodes[key] = col
        flags = np.array([self.flags.get(r, 0) for r in measured], dtype=np.uint8)
        stats.quota_unreachable = int(np.count_nonzero(flags & FLAG_QUOTA_UNREACHABLE))
        ts = TraceSet(
            self.topo,
            ids,
            np.array([arrivals[r][1] for r in measured], dtype=np.int8),
            np.array([arrivals[r][0] for r in measured], dtype=np.int64),
            np.array([completions[r] for r in measured], dtype=np.int64),
            nodes,
            _quality(self.topo, nodes, n),
            flags,
        )
        return SimResult(ts, stats)


def mean_in_system(arrival: np.ndarray, completion: np.ndarray, t0: int, t1: int) -> float:
    """Time-average number of requests in system over [t0, t1]."""
    overlap = np.clip(np.minimum(completion, t1) - np.maximum(arrival, t0), 0, None)
    return float(overlap.sum()) / (t1 - t0)


def littles_law(traces: TraceSet) -> tuple[float, float]:
    """(L, lambda * W) over the window spanned by the measured arrivals."""
    if len(traces) < 2:
        return math.nan, math.nan
    t0, t1 = int(traces.arrival.min()), int(traces.arrival.max())
    L = mean_in_system(traces.arrival, traces.completion, t0, t1)
    rate = (len(traces) - 1) / (t1 - t0)
    W = float(traces.e2e().mean())
    return L, rate * W
