"""Wire format.

All integers are big-endian::

    magic        4s   b"EBF1"
    version      u8   1
    msg_type     u8   1 request, 2 response, 3 forward, 4 health, 5 error
    request_id   u64
    class        u8   0 text, 1 image
    payload_len  u32
    payload      payload_len bytes
    ts_count     u32
    ts_count x (component hash u64, enqueue u64, start u64, end u64)

Timestamps are monotonic-clock nanoseconds; the component hash is the first
8 bytes of blake2b(component id).
"""

from __future__ import annotations

import asyncio
import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum

MAGIC = b"EBF1"
VERSION = 1

HEADER = struct.Struct(">4sBBQBI")
COUNT = struct.Struct(">I")
STAMP = struct.Struct(">QQQQ")

# Guards against garbage lengths allocating huge buffers.
MAX_PAYLOAD = 16 << 20
MAX_STAMPS = 1 << 16


class MsgType(IntEnum):
    REQUEST = 1
    RESPONSE = 2
    FORWARD = 3
    HEALTH = 4
    ERROR = 5


class FrameCorrupt(ValueError):
    pass


def component_hash(cid: str) -> int:
    return int.from_bytes(hashlib.blake2b(cid.encode(), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class Stamp:
    component: int
    enqueue: int
    start: int
    end: int


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    request_id: int
    cls: int = 0
    payload: bytes = b""
    stamps: tuple[Stamp, ...] = field(default=())
    version: int = VERSION

    def with_stamps(self, *more: Stamp) -> "Frame":
        return Frame(self.msg_type, self.request_id, self.cls, self.payload, self.stamps + more, self.version)


def encode(frame: Frame) -> bytes:
    parts = [
        HEADER.pack(MAGIC, frame.version, int(frame.msg_type), frame.request_id, frame.cls, len(frame.payload)),
        frame.payload,
        COUNT.pack(len(frame.stamps)),
    ]
    parts.extend(STAMP.pack(s.component, s.enqueue, s.start, s.end) for s in frame.stamps)
    return b"".join(parts)


def _header(buf: bytes) -> tuple:
    magic, version, mtype, rid, cls, plen = HEADER.unpack(buf)
    if magic != MAGIC:
        raise FrameCorrupt(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameCorrupt(f"unsupported version {version}")
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise FrameCorrupt(f"unknown message type {mtype}") from None
    if plen > MAX_PAYLOAD:
        raise FrameCorrupt(f"payload length {plen} exceeds limit")
    return version, mtype, rid, cls, plen


def _stamps(buf: bytes, n: int) -> tuple[Stamp, ...]:
    return tuple(Stamp(*STAMP.unpack_from(buf, i * STAMP.size)) for i in range(n))


def decode(buf: bytes) -> Frame:
    """Decode exactly one frame; trailing or missing bytes are corruption."""
    if len(buf) < HEADER.size:
        raise FrameCorrupt("truncated header")
    version, mtype, rid, cls, plen = _header(buf[: HEADER.size])
    off = HEADER.size + plen
    if len(buf) < off + COUNT.size:
        raise FrameCorrupt("truncated payload")
    payload = buf[HEADER.size : off]
    (n,) = COUNT.unpack_from(buf, off)
    off += COUNT.size
    if n > MAX_STAMPS or len(buf) != off + n * STAMP.size:
        raise FrameCorrupt("timestamp section length mismatch")
    return Frame(mtype, rid, cls, bytes(payload), _stamps(buf[off:], n), version)


async def read_frame(reader: asyncio.StreamReader) -> Frame | None:
    """Next frame from ``reader``, or None on a clean end of stream."""
    try:
        head = await reader.readexactly(HEADER.size)
    except asyncio.IncompleteReadError as exc:
        if exc.partial:
            raise FrameCorrupt("connection closed mid-header") from None
        return None
    version, mtype, rid, cls, plen = _header(head)
    try:
        payload = await reader.readexactly(plen)
        (n,) = COUNT.unpack(await reader.readexactly(COUNT.size))
        if n > MAX_STAMPS:
            raise FrameCorrupt(f"timestamp count {n} exceeds limit")
        body = await reader.readexactly(n * STAMP.size)
    except asyncio.IncompleteReadError:
        raise FrameCorrupt("connection closed mid-frame") from None
    return Frame(mtype, rid, cls, payload, _stamps(body, n), version)


def pack_u32(v: int) -> bytes:
    return COUNT.pack(v)


def unpack_u32(b: bytes) -> int:
    if len(b) != COUNT.size:
        raise FrameCorrupt("expected a 4-byte count payload")
    return COUNT.unpack(b)[0]
