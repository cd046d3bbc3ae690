import asyncio
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebf.config import load_config
from ebf.core import Deterministic, critical_path, end_to_end_latency
from ebf.netbench.channel import Channel, ConnectFailed
from ebf.netbench.driver import drive_load
from ebf.netbench.launch import Cluster, free_ports
from ebf.netbench.protocol import (
    HEADER,
    MAGIC,
    Frame,
    FrameCorrupt,
    MsgType,
    Stamp,
    decode,
    encode,
    read_frame,
)
from ebf.orchestrate import _workload_for
from ebf.workload import OpenLoop, StopAfterRequests, WorkloadSpec

from conftest import station, topo

u64 = st.integers(0, 2**64 - 1)
stamps = st.builds(Stamp, u64, u64, u64, u64)
frames = st.builds(
    Frame,
    st.sampled_from(list(MsgType)),
    u64,
    st.integers(0, 255),
    st.binary(max_size=64),
    st.lists(stamps, max_size=6).map(tuple),
)


@settings(max_examples=500, deadline=None)
@given(frames)
def test_round_trip(frame):
    assert decode(encode(frame)) == frame


def test_layout_is_big_endian():
    buf = encode(Frame(MsgType.REQUEST, 0x0102030405060708, 1, b"xy", (Stamp(1, 2, 3, 4),)))
    assert buf[:4] == MAGIC
    assert buf[4:6] == b"\x01\x01"
    assert buf[6:14] == bytes(range(1, 9))
    assert buf[14] == 1
    assert buf[15:19] == b"\x00\x00\x00\x02"
    assert buf[19:21] == b"xy"
    assert buf[21:25] == b"\x00\x00\x00\x01"
    assert len(buf) == HEADER.size + 2 + 4 + 32


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XBF1" + b[4:],
        lambda b: b[:4] + b"\x02" + b[5:],
        lambda b: b[:5] + b"\x09" + b[6:],
        lambda b: b[:-1],
        lambda b: b + b"\x00",
        lambda b: b[:10],
    ],
    ids=["magic", "version", "msg_type", "short", "trailing", "truncated_header"],
)
def test_corrupt_frames_rejected(mutate):
    good = encode(Frame(MsgType.RESPONSE, 7, 0, b"abcd", (Stamp(9, 1, 2, 3),)))
    with pytest.raises(FrameCorrupt):
        decode(mutate(good))


def test_stream_reader():
    async def go():
        r = asyncio.StreamReader()
        f = Frame(MsgType.FORWARD, 3, 1, b"p", (Stamp(1, 1, 1, 1),))
        r.feed_data(encode(f) + encode(f)[:5])
        r.feed_eof()
        assert await read_frame(r) == f
        with pytest.raises(FrameCorrupt):
            await read_frame(r)
        clean = asyncio.StreamReader()
        clean.feed_eof()
        assert await read_frame(clean) is None

    asyncio.run(go())


# ------------------------------------------------------------ loopback


THREE = """\
name: three-stage
mode: network
seed: 3
components:
  - {{id: a, servers: 2, service: {{deterministic: {{ms: 5}}}}}}
  - {{id: b, servers: 2, service: {{deterministic: {{ms: 10}}}}}}
  - {{id: c, servers: 2, service: {{deterministic: {{ms: 15}}}}}}
topology:
  entry: a
  root: {{seq: [a, b, c]}}
workload:
  open: {{rate_per_s: {rate}}}
  requests: {n}
network:
  addresses: {{a: 127.0.0.1:{p[0]}, b: 127.0.0.1:{p[1]}, c: 127.0.0.1:{p[2]}}}
  timeout_s: 5
"""


def three_stage(tmp_path, rate=20, n=100):
    path = tmp_path / "three.yaml"
    path.write_text(THREE.format(p=free_ports(3), rate=rate, n=n))
    return path, load_config(path, env={})


@pytest.fixture(scope="module")
def cluster(tmp_path_factory):
    path, cfg = three_stage(tmp_path_factory.mktemp("net"))
    with Cluster(cfg, path) as c:
        yield c


def entry_of(cfg):
    return cfg.network.address(cfg.topology.entry)


def test_health(cluster):
    async def go():
        ch = Channel(entry_of(cluster.cfg))
        try:
            return await ch.health(2)
        finally:
            await ch.close()

    assert asyncio.run(go())


def test_three_stage_pipeline(cluster):
    cfg = cluster.cfg
    res = drive_load(entry_of(cfg), cfg.topology, _workload_for(cfg, None), timeout_s=5)
    assert res.conserved and not res.errors and not res.timeouts
    assert len(res.traces) == 100 and not res.multi_host
    e2e = sorted(end_to_end_latency(t) for t in res.traces)
    p50 = e2e[49]
    assert 30e6 <= p50 <= 40e6
    for t in res.traces:
        assert critical_path(t) <= end_to_end_latency(t)
        leaves = [s.component_id for s in t.root_span.children]
        assert leaves == ["a", "b", "c"]


def test_zero_requests(cluster):
    cfg = cluster.cfg
    wl = WorkloadSpec(OpenLoop(10), stop=StopAfterRequests(0))
    res = drive_load(entry_of(cfg), cfg.topology, wl)
    assert res.injected == 0 and res.traces == [] and res.conserved


def test_unreachable_entry():
    (port,) = free_ports(1)
    wl = WorkloadSpec(OpenLoop(10), stop=StopAfterRequests(5))
    with pytest.raises(ConnectFailed):
        drive_load(f"127.0.0.1:{port}", topo([station("a", Deterministic(1))]), wl, timeout_s=1)


def test_killed_downstream_yields_errors_not_a_hang(tmp_path):
    path, cfg = three_stage(tmp_path, rate=50, n=150)
    with Cluster(cfg, path) as c:
        threading.Timer(1.0, c.kill, args=("c",)).start()
        t0 = time.monotonic()
        res = drive_load(entry_of(cfg), cfg.topology, _workload_for(cfg, None), timeout_s=3)
        assert time.monotonic() - t0 < 20
    assert res.conserved
    assert res.errors, "requests after the kill must surface as errors"
    assert res.traces, "requests before the kill still complete"
    assert any("c" in msg for _, msg in res.errors)
