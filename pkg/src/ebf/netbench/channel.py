"""A TCP connection carrying many outstanding requests, matched by request id."""

from __future__ import annotations

import asyncio
import logging

from ebf.netbench.protocol import Frame, FrameCorrupt, MsgType, encode, read_frame

log = logging.getLogger("ebf.netbench")


class ConnectFailed(ConnectionError):
    pass


class DownstreamUnreachable(ConnectionError):
    pass


class RequestTimeout(TimeoutError):
    def __init__(self, request_id: int):
        super().__init__(f"request {request_id} timed out")
        self.request_id = request_id


def split_host_port(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host.strip("[]"), int(port)


class Channel:
    """Multiplexed client connection; reconnects lazily after a failure."""

    def __init__(self, addr: str):
        self.addr = addr
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._pending: dict[int, asyncio.Future] = {}
        self._reader_task: asyncio.Task | None = None
        self._connect_lock = asyncio.Lock()
        self._write_lock = asyncio.Lock()

    async def _ensure(self) -> None:
        async with self._connect_lock:
            if self._writer is not None:
                return
            host, port = split_host_port(self.addr)
            try:
                self._reader, self._writer = await asyncio.open_connection(host, port)
            except OSError as exc:
                raise ConnectFailed(f"cannot connect to {self.addr}: {exc}") from None
            self._reader_task = asyncio.create_task(self._read_loop(self._reader))

    async def _read_loop(self, reader: asyncio.StreamReader) -> None:
        err: Exception = DownstreamUnreachable(f"{self.addr} closed the connection")
        try:
            while True:
                frame = await read_frame(reader)
                if frame is None:
                    break
                fut = self._pending.pop(frame.request_id, None)
                if fut is not None and not fut.done():
                    fut.set_result(frame)
        except (OSError, FrameCorrupt) as exc:
            err = DownstreamUnreachable(f"{self.addr}: {exc}")
        except asyncio.CancelledError:
            err = DownstreamUnreachable(f"{self.addr}: channel closed")
        self._fail(err)

    def _fail(self, err: Exception) -> None:
        if self._writer is not None:
            self._writer.close()
        self._reader = self._writer = None
        pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(err)

    async def call(self, frame: Frame, timeout: float | None = None) -> Frame:
        await self._ensure()
        if frame.request_id in self._pending:
            raise ValueError(f"request id {frame.request_id} already in flight on {self.addr}")
        fut = asyncio.get_running_loop().create_future()
        self._pending[frame.request_id] = fut
        writer = self._writer
        try:
            async with self._write_lock:
                writer.write(encode(frame))
                await writer.drain()
        except (OSError, AttributeError) as exc:
            self._pending.pop(frame.request_id, None)
            self._fail(DownstreamUnreachable(f"{self.addr}: {exc}"))
            raise DownstreamUnreachable(f"{self.addr}: {exc}") from None
        try:
            return await asyncio.wait_for(fut, timeout)
        except asyncio.TimeoutError:
            self._pending.pop(frame.request_id, None)
            raise RequestTimeout(frame.request_id) from None

    async def health(self, timeout: float = 2.0) -> bool:
        reply = await self.call(Frame(MsgType.HEALTH, 0), timeout)
        return reply.msg_type == MsgType.HEALTH

    async def close(self) -> None:
        if self._reader_task is not None:
            self._reader_task.cancel()
            try:
                await self._reader_task
            except asyncio.CancelledError:
                pass
            self._reader_task = None
        if self._writer is not None:
            self._writer.close()
        self._reader = self._writer = None
