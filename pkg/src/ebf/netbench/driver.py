"""Client-side load driver: issues requests per a WorkloadSpec and rebuilds
request traces from the timestamps the services append."""

from __future__ import annotations

import asyncio
import ipaddress
import itertools
import logging
import socket
import time
from dataclasses import dataclass, field

from ebf.core import Leaf, Node, RequestClass, RequestTrace, Span, Topology, node_kind
from ebf.netbench.channel import Channel, ConnectFailed, DownstreamUnreachable, RequestTimeout, split_host_port
from ebf.netbench.protocol import Frame, FrameCorrupt, MsgType, Stamp, component_hash, unpack_u32
from ebf.traceset import FLAG_QUOTA_UNREACHABLE
from ebf.workload import (
    ClosedLoop,
    StopAfterDuration,
    StopAfterRequests,
    WorkloadSpec,
    closed_loop_users,
    next_closed_loop_arrival,
    open_loop_arrays,
)

log = logging.getLogger("ebf.netbench")

now = time.monotonic_ns

# Offset between starting the driver and the first scheduled send.
START_DELAY_NS = 50_000_000


@dataclass
class Outcome:
    request_id: int
    cls: RequestClass
    scheduled: int
    sent: int = -1
    done: int = -1
    status: str = "pending"  # ok | error | timeout
    stamps: tuple[Stamp, ...] = ()
    flags: int = 0
    message: str = ""


@dataclass
class DriveResult:
    traces: list[RequestTrace]
    errors: list[tuple[int, str]]
    timeouts: list[int]
    warmup_discarded: int
    injected: int
    start_ns: int
    elapsed_ns: int
    multi_host: bool = False
    outcomes: list[Outcome] = field(default_factory=list, repr=False)

    @property
    def conserved(self) -> bool:
        return self.injected == len(self.traces) + len(self.errors) + len(self.timeouts) + self.warmup_discarded


def is_loopback(addr: str) -> bool:
    host, _ = split_host_port(addr)
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        try:
            return ipaddress.ip_address(socket.gethostbyname(host)).is_loopback
        except OSError:
            return False


# ------------------------------------------------------- trace rebuilding


def rebuild_trace(topology: Topology, o: Outcome) -> RequestTrace:
    """Span tree from the per-station stamps of one completed request.

    Composite spans cover their children: enqueue = start = earliest child
    enqueue, end = latest child end.
    """
    by_hash = {}
    for s in o.stamps:
        by_hash[s.component] = s
    ids = {component_hash(c): c for c in topology.component_ids}
    unknown = set(by_hash) - set(ids)
    if unknown:
        raise FrameCorrupt(f"request {o.request_id}: timestamps from unknown components")

    def build(node: Node) -> Span | None:
        if isinstance(node, Leaf):
            s = by_hash.get(component_hash(node.id))
            return None if s is None else Span(node.id, s.enqueue, s.start, s.end)
        kids = [k for k in (build(c) for c in node.children) if k is not None]
        if not kids:
            return None
        lo = min(k.enqueue_time for k in kids)
        hi = max(k.end_time for k in kids)
        return Span(node.key, lo, lo, hi, kids, node_kind(node))

    flags = ("quota_unreachable",) if o.flags & FLAG_QUOTA_UNREACHABLE else ()
    return RequestTrace(o.request_id, o.cls, o.scheduled, o.done, build(topology.root), None, o.sent, flags)


# ---------------------------------------------------------------- driver


class Driver:
    def __init__(self, entry: str, topology: Topology, workload: WorkloadSpec, *,
                 timeout_s: float = 10.0, connections: int = 4):
        self.entry = entry
        self.topology = topology
        self.workload = workload
        self.timeout = timeout_s
        self.channels = [Channel(entry) for _ in range(max(1, connections))]
        self._rr = itertools.cycle(self.channels)
        self.outcomes: list[Outcome] = []
        self.t0 = 0

    async def _check(self) -> None:
        try:
            ok = await self.channels[0].health(self.timeout)
        except (ConnectFailed, DownstreamUnreachable, RequestTimeout) as exc:
            raise ConnectFailed(f"entry {self.entry} not serving: {exc}") from None
        if not ok:
            raise ConnectFailed(f"entry {self.entry} failed its health check")

    async def _issue(self, o: Outcome) -> None:
        ch = next(self._rr)
        o.sent = now()
        try:
            reply = await ch.call(Frame(MsgType.REQUEST, o.request_id, o.cls.code), self.timeout)
        except RequestTimeout:
            o.done, o.status = now(), "timeout"
            return
        except (ConnectFailed, DownstreamUnreachable) as exc:
            o.done, o.status, o.message = now(), "error", str(exc)
            return
        o.done = now()
        o.stamps = reply.stamps
        if reply.msg_type == MsgType.RESPONSE:
            o.status = "ok"
            try:
                o.flags = unpack_u32(reply.payload)
            except FrameCorrupt:
                o.flags = 0
        else:
            o.status, o.message = "error", reply.payload.decode(errors="replace")

    async def _sleep_until(self, t: int) -> None:
        delay = t - now()
        if delay > 0:
            await asyncio.sleep(delay / 1e9)

    async def _open_loop(self) -> None:
        arr = open_loop_arrays(self.workload)
        tasks = []
        for ev in arr.events():
            o = Outcome(ev.request_id, ev.cls, self.t0 + ev.scheduled_time)
            self.outcomes.append(o)
            await self._sleep_until(o.scheduled)
            tasks.append(asyncio.create_task(self._issue(o)))
        if tasks:
            await asyncio.gather(*tasks)

    async def _closed_loop(self) -> None:
        wl = self.workload
        mode: ClosedLoop = wl.mode
        users = closed_loop_users(wl)
        ids = itertools.count()
        warm_end = self.t0 + wl.warmup_ns
        horizon = self.t0 + int(wl.stop.seconds * 1e9) if isinstance(wl.stop, StopAfterDuration) else None
        target = wl.stop.n if isinstance(wl.stop, StopAfterRequests) else None
        measured = [0]
        stop = asyncio.Event()

        async def user(state) -> None:
            t = self.t0
            while not stop.is_set():
                ev = next_closed_loop_arrival(
                    state, t, None, think_time_ms=mode.think_time_ms,
                    fraction_text=wl.fraction_text, request_id=next(ids),
                )
                if horizon is not None and ev.scheduled_time >= horizon:
                    return
                try:
                    await asyncio.wait_for(stop.wait(), max(0.0, (ev.scheduled_time - now()) / 1e9))
                    return
                except asyncio.TimeoutError:
                    pass
                o = Outcome(ev.request_id, ev.cls, ev.scheduled_time)
                self.outcomes.append(o)
                await self._issue(o)
                t = o.done
                if o.scheduled >= warm_end:
                    measured[0] += 1
                    if target is not None and measured[0] >= target:
                        stop.set()

        if target == 0:
            return
        await asyncio.gather(*(user(u) for u in users))

    async def run(self) -> DriveResult:
        await self._check()
        self.t0 = now() + START_DELAY_NS
        try:
            if isinstance(self.workload.mode, ClosedLoop):
                await self._closed_loop()
            else:
                await self._open_loop()
        finally:
            for ch in self.channels:
                await ch.close()
        return self._result(now() - self.t0)

    def _result(self, elapsed: int) -> DriveResult:
        warm_end = self.t0 + self.workload.warmup_ns
        traces, errors, timeouts, discarded = [], [], [], 0
        for o in sorted(self.outcomes, key=lambda o: o.request_id):
            if o.scheduled < warm_end:
                discarded += 1
            elif o.status == "ok":
                traces.append(rebuild_trace(self.topology, o))
            elif o.status == "timeout":
                timeouts.append(o.request_id)
            else:
                errors.append((o.request_id, o.message))
        return DriveResult(
            traces, errors, timeouts, discarded, len(self.outcomes), self.t0, elapsed,
            not is_loopback(self.entry), self.outcomes,
        )


def drive_load(entry: str, topology: Topology, workload: WorkloadSpec, *,
               timeout_s: float = 10.0, connections: int = 4) -> DriveResult:
    """Blocking wrapper around :class:`Driver`."""
    return asyncio.run(Driver(entry, topology, workload, timeout_s=timeout_s, connections=connections).run())
