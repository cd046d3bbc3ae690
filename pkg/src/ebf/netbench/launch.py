"""Start every station of a config as a local ``ebf serve`` process."""

from __future__ import annotations

import asyncio
import os
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

from ebf.config import RunConfig
from ebf.netbench.channel import Channel, ConnectFailed, DownstreamUnreachable, RequestTimeout


def free_ports(n: int, host: str = "127.0.0.1") -> list[int]:
    socks = []
    try:
        for _ in range(n):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


async def wait_healthy(addrs: list[str], deadline_s: float = 15.0) -> None:
    """Poll health frames until every address answers."""
    end = time.monotonic() + deadline_s
    for addr in addrs:
        while True:
            ch = Channel(addr)
            try:
                if await ch.health(1.0):
                    break
            except (ConnectFailed, DownstreamUnreachable, RequestTimeout):
                pass
            finally:
                await ch.close()
            if time.monotonic() > end:
                raise ConnectFailed(f"{addr} did not become healthy within {deadline_s:g} s")
            await asyncio.sleep(0.05)


class Cluster:
    """Local subprocesses, one per component; use as a context manager."""

    def __init__(self, cfg: RunConfig, config_path: str | Path, *, log_level: str = "WARNING"):
        missing = [c for c in cfg.topology.component_ids if c not in dict(cfg.network.addresses)]
        if missing:
            raise ValueError(f"no network address for {', '.join(missing)}")
        self.cfg = cfg
        self.config_path = str(config_path)
        self.log_level = log_level
        self.procs: dict[str, subprocess.Popen] = {}

    def start(self, timeout_s: float = 15.0) -> "Cluster":
        env = dict(os.environ, EBF_LOG_LEVEL=self.log_level)
        for cid, addr in self.cfg.network.addresses:
            self.procs[cid] = subprocess.Popen(
                [sys.executable, "-m", "ebf", "serve", "--component", cid, "--config", self.config_path,
                 "--listen", addr],
                env=env,
            )
        try:
            asyncio.run(wait_healthy([a for _, a in self.cfg.network.addresses], timeout_s))
        except BaseException:
            self.stop()
            raise
        return self

    def kill(self, cid: str) -> None:
        p = self.procs[cid]
        p.send_signal(signal.SIGKILL)
        p.wait()

    def stop(self) -> None:
        for p in self.procs.values():
            if p.poll() is None:
                p.terminate()
        for p in self.procs.values():
            try:
                p.wait(5)
            except subprocess.TimeoutExpired:
                p.kill()
                p.wait()

    def __enter__(self) -> "Cluster":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
