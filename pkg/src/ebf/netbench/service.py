"""One pipeline station as a TCP service.

Every service runs ``servers`` worker tasks over a shared inbound queue.
The entry station is also the orchestrator: after its own work it walks the
rest of the composition tree, forwarding the request to each downstream
station and collecting the timestamps they append.
"""

from __future__ import annotations

import asyncio
import logging
import time
from concurrent.futures import ThreadPoolExecutor

from ebf.config import RunConfig
from ebf.core import Branch, Leaf, Node, Par, RequestClass, Seq, Tiered, sample_service_time
from ebf.netbench.channel import Channel, ConnectFailed, DownstreamUnreachable, RequestTimeout, split_host_port
from ebf.netbench.protocol import (
    Frame,
    FrameCorrupt,
    MsgType,
    Stamp,
    component_hash,
    encode,
    pack_u32,
    read_frame,
    unpack_u32,
)
from ebf.simengine import resolve_branch
from ebf.traceset import FLAG_QUOTA_UNREACHABLE
from ebf.workload import substream

log = logging.getLogger("ebf.netbench")

now = time.monotonic_ns


def spin(duration_ns: int) -> None:
    deadline = now() + duration_ns
    while now() < deadline:
        pass


class _Kernel:
    """Repeats one kernel call until the sampled duration has elapsed."""

    def __init__(self, name: str):
        from ebf import kernels

        self.spec = kernels.KernelSpec(name)
        self.inputs = kernels.make_inputs(self.spec)
        self.fast = kernels.fast

    def __call__(self, duration_ns: int) -> None:
        deadline = now() + duration_ns
        while True:
            self.fast(self.spec, self.inputs)
            if now() >= deadline:
                break


class _Failed(Exception):
    """A downstream call failed; the request gets an error frame."""


class Service:
    def __init__(self, cfg: RunConfig, component_id: str):
        self.cfg = cfg
        self.topology = cfg.topology
        self.spec = self.topology.component(component_id)
        self.id = component_id
        self.hash = component_hash(component_id)
        self.is_entry = component_id == self.topology.entry
        self.rng = substream(cfg.seed, f"svc:{component_id}")
        self.yield_model = None
        for node in self.topology.walk():
            if isinstance(node, Tiered):
                for t in node.tiers:
                    if t.component == component_id:
                        self.yield_model = t.yield_model
                        self.yield_rng = substream(cfg.seed, f"yield:{component_id}")
        self.branch_rngs = {
            n.key: substream(cfg.seed, f"branch:{n.key}")
            for n in self.topology.walk()
            if isinstance(n, Branch) and n.by == "probability"
        }
        self.timeout = cfg.network.timeout_s
        self.channels: dict[str, Channel] = {}
        self.queue: asyncio.Queue = asyncio.Queue()
        self.pool: ThreadPoolExecutor | None = None
        work = cfg.network.work
        if work == "spin":
            self.blocking = spin
        elif work == "kernel":
            self.blocking = _Kernel(cfg.network.kernel)
        else:
            self.blocking = None
        self._tasks: list[asyncio.Task] = []
        self._inflight: set[asyncio.Task] = set()
        self._server: asyncio.base_events.Server | None = None

    # -- lifecycle

    async def start(self, listen: str) -> None:
        host, port = split_host_port(listen)
        if self.blocking is not None:
            self.pool = ThreadPoolExecutor(self.spec.servers, thread_name_prefix=f"ebf-{self.id}")
        self._tasks = [asyncio.create_task(self._worker()) for _ in range(self.spec.servers)]
        self._server = await asyncio.start_server(self._handle, host, port)
        log.info("%s listening on %s with %d workers", self.id, listen, self.spec.servers)

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def serve_forever(self) -> None:
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for t in self._tasks:
            t.cancel()
        for ch in self.channels.values():
            await ch.close()
        if self.pool is not None:
            self.pool.shutdown(wait=False)

    # -- inbound

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        lock = asyncio.Lock()
        peer = writer.get_extra_info("peername")
        try:
            while True:
                frame = await read_frame(reader)
                if frame is None:
                    break
                if frame.msg_type == MsgType.HEALTH:
                    await self._send(writer, lock, Frame(MsgType.HEALTH, frame.request_id, payload=self.id.encode()))
                elif frame.msg_type == MsgType.FORWARD or (frame.msg_type == MsgType.REQUEST and self.is_entry):
                    self.queue.put_nowait((frame, now(), writer, lock))
                else:
                    msg = f"{self.id} cannot handle {frame.msg_type.name.lower()} frames"
                    await self._send(writer, lock, Frame(MsgType.ERROR, frame.request_id, frame.cls, msg.encode()))
        except FrameCorrupt as exc:
            log.warning("%s: corrupt frame from %s: %s; closing connection", self.id, peer, exc)
        except (ConnectionError, OSError):
            pass
        finally:
            writer.close()

    async def _send(self, writer, lock: asyncio.Lock, frame: Frame) -> None:
        if writer.is_closing():
            return
        async with lock:
            writer.write(encode(frame))
            try:
                await writer.drain()
            except (ConnectionError, OSError):
                pass

    async def _worker(self) -> None:
        loop = asyncio.get_running_loop()
        while True:
            frame, enqueue, writer, lock = await self.queue.get()
            start = now()
            duration = sample_service_time(self.spec.service_model, self.rng)
            if self.blocking is None:
                await asyncio.sleep(duration / 1e9)
            else:
                await loop.run_in_executor(self.pool, self.blocking, duration)
            stamp = Stamp(self.hash, enqueue, start, now())
            if frame.msg_type == MsgType.REQUEST:
                # The worker is free again while the rest of the tree runs.
                task = asyncio.create_task(self._orchestrate(frame, stamp, writer, lock))
                self._inflight.add(task)
                task.add_done_callback(self._inflight.discard)
                continue
            payload = b""
            if self.yield_model is not None:
                payload = pack_u32(int(self.yield_model.draw(self.yield_rng, 1)[0]))
            await self._send(writer, lock, Frame(MsgType.RESPONSE, frame.request_id, frame.cls, payload, (stamp,)))

    # -- orchestration (entry only)

    def _channel(self, cid: str) -> Channel:
        ch = self.channels.get(cid)
        if ch is None:
            try:
                addr = self.cfg.network.address(cid)
            except KeyError:
                raise _Failed(f"no address configured for {cid!r}") from None
            ch = self.channels[cid] = Channel(addr)
        return ch

    async def _orchestrate(self, frame: Frame, own: Stamp, writer, lock) -> None:
        stamps = [own]
        try:
            flags = await self._execute(self.topology.root, frame, stamps)
        except _Failed as exc:
            log.info("request %d failed: %s", frame.request_id, exc)
            await self._send(
                writer, lock, Frame(MsgType.ERROR, frame.request_id, frame.cls, str(exc).encode(), tuple(stamps))
            )
            return
        await self._send(writer, lock, Frame(MsgType.RESPONSE, frame.request_id, frame.cls, pack_u32(flags), tuple(stamps)))

    async def _call(self, cid: str, frame: Frame, stamps: list[Stamp]) -> Frame:
        try:
            reply = await self._channel(cid).call(
                Frame(MsgType.FORWARD, frame.request_id, frame.cls), self.timeout
            )
        except (ConnectFailed, DownstreamUnreachable) as exc:
            raise _Failed(f"downstream {cid} unreachable: {exc}") from None
        except RequestTimeout:
            raise _Failed(f"downstream {cid} timed out") from None
        stamps.extend(reply.stamps)
        if reply.msg_type != MsgType.RESPONSE:
            raise _Failed(f"downstream {cid}: {reply.payload.decode(errors='replace')}")
        return reply

    async def _execute(self, node: Node, frame: Frame, stamps: list[Stamp]) -> int:
        """Run ``node`` for ``frame``; returns the request's flag bits."""
        flags = 0
        if isinstance(node, Leaf):
            if node.id != self.id:
                await self._call(node.id, frame, stamps)
        elif isinstance(node, Seq):
            for c in node.children:
                flags |= await self._execute(c, frame, stamps)
        elif isinstance(node, Par):
            results = await asyncio.gather(
                *(self._execute(c, frame, stamps) for c in node.children), return_exceptions=True
            )
            for r in results:
                if isinstance(r, BaseException):
                    raise r
                flags |= r
        elif isinstance(node, Branch):
            u = self.branch_rngs[node.key].random() if node.by == "probability" else None
            idx = resolve_branch(node, RequestClass.from_code(frame.cls), u)
            flags = await self._execute(node.children[idx], frame, stamps)
        elif isinstance(node, Tiered):
            got = 0
            for t in node.tiers:
                if got >= node.quota:
                    break
                reply = await self._call(t.component, frame, stamps)
                try:
                    got += unpack_u32(reply.payload)
                except FrameCorrupt:
                    raise _Failed(f"tier {t.component} returned no result count") from None
            if got < node.quota:
                flags |= FLAG_QUOTA_UNREACHABLE
        return flags

async def serve_component(cfg: RunConfig, component_id: str, listen: str) -> None:
    """Run one service until cancelled."""
    svc = Service(cfg, component_id)
    await svc.start(listen)
    try:
        await svc.serve_forever()
    finally:
        await svc.stop()
