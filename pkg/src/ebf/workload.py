"""Arrival processes: open-loop Poisson streams and closed-loop users.

Every random quantity in a run comes from a named substream of one master
seed (PCG64 via ``SeedSequence`` spawn keys), so a stream's values never
depend on how many draws another stream made.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ebf.core import NS_PER_S, RequestClass


class InvalidRate(ValueError):
    pass


class InvalidWorkload(ValueError):
    pass


def stream_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "big")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` derived from the master ``seed``."""
    ss = np.random.SeedSequence(entropy=seed & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(stream_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class OpenLoop:
    rate_per_s: float


@dataclass(frozen=True)
class ClosedLoop:
    users: int
    think_time_ms: float


@dataclass(frozen=True)
class StopAfterRequests:
    """Stop once ``n`` post-warm-up requests are in the measured set."""

    n: int


@dataclass(frozen=True)
class StopAfterDuration:
    """Stop injecting at ``seconds`` after time zero (warm-up included)."""

    seconds: float


@dataclass(frozen=True)
class WorkloadSpec:
    mode: OpenLoop | ClosedLoop
    fraction_text: float = 0.9
    warmup_s: float = 0.0
    stop: StopAfterRequests | StopAfterDuration = StopAfterRequests(1000)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.mode, OpenLoop):
            if not self.mode.rate_per_s > 0:
                raise InvalidRate(f"arrival rate must be > 0, got {self.mode.rate_per_s}")
        elif isinstance(self.mode, ClosedLoop):
            if self.mode.users < 1 or not self.mode.think_time_ms > 0:
                raise InvalidWorkload("closed loop needs users >= 1 and think time > 0")
        if not 0.0 <= self.fraction_text <= 1.0:
            raise InvalidWorkload(f"fraction_text must lie in [0, 1], got {self.fraction_text}")
        if self.warmup_s < 0:
            raise InvalidWorkload("warmup must be >= 0")
        if isinstance(self.stop, StopAfterRequests) and self.stop.n < 0:
            raise InvalidWorkload("request count must be >= 0")
        if isinstance(self.stop, StopAfterDuration) and self.stop.seconds < 0:
            raise InvalidWorkload("duration must be >= 0")

    @property
    def warmup_ns(self) -> int:
        return int(round(self.warmup_s * NS_PER_S))


@dataclass(frozen=True, slots=True)
class ArrivalEvent:
    request_id: int
    scheduled_time: int
    cls: RequestClass


@dataclass(frozen=True)
class ArrivalArrays:
    """Columnar open-loop stream: ids 0..n-1, int64 ns times, class codes (0 text)."""

    scheduled: np.ndarray
    cls: np.ndarray

    def __len__(self):
        return len(self.scheduled)

    def events(self) -> Iterator[ArrivalEvent]:
        for i, (t, c) in enumerate(zip(self.scheduled.tolist(), self.cls.tolist())):
            yield ArrivalEvent(i, t, RequestClass.from_code(c))


_BLOCK = 1 << 16


def open_loop_arrays(spec: WorkloadSpec) -> ArrivalArrays:
    """Vectorised open-loop generation (see :func:`gen_open_loop`)."""
    if not isinstance(spec.mode, OpenLoop):
        raise InvalidWorkload("open-loop generation needs an open-loop workload")
    rate = spec.mode.rate_per_s
    rng = substream(spec.seed, "arrivals")
    warm = spec.warmup_ns
    chunks: list[np.ndarray] = []
    clock = 0.0
    measured = 0
    by_count = isinstance(spec.stop, StopAfterRequests)
    limit = 0 if by_count else int(round(spec.stop.seconds * NS_PER_S))
    # Fixed-size blocks keep the stream identical whatever the stop rule.
    while not (by_count and spec.stop.n == 0):
        t = clock + np.cumsum(rng.exponential(1.0 / rate, _BLOCK))
        clock = float(t[-1])
        ns = np.rint(t * NS_PER_S).astype(np.int64)
        chunks.append(ns)
        if by_count:
            measured += int(np.count_nonzero(ns >= warm))
            if measured >= spec.stop.n:
                break
        elif ns[-1] >= limit:
            break
    scheduled = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
    if by_count and len(scheduled):
        post = np.flatnonzero(scheduled >= warm)
        scheduled = scheduled[: post[spec.stop.n - 1] + 1]
    elif not by_count:
        scheduled = scheduled[scheduled < limit]
    cls = draw_classes(substream(spec.seed, "classes"), spec.fraction_text, len(scheduled))
    return ArrivalArrays(scheduled, cls)


def draw_classes(rng: np.random.Generator, fraction_text: float, n: int) -> np.ndarray:
    out = []
    done = 0
    while done < n:
        u = rng.random(_BLOCK)
        out.append(u)
        done += _BLOCK
    if not out:
        return np.zeros(0, np.int8)
    u = np.concatenate(out)[:n]
    return (u >= fraction_text).astype(np.int8)


def gen_open_loop(spec: WorkloadSpec) -> Iterator[ArrivalEvent]:
    """Poisson arrivals at ``rate_per_s``; class Bernoulli(fraction_text).

    ``StopAfterRequests(n)`` ends the stream at the n-th arrival scheduled
    after warm-up (warm-up arrivals come first); ``StopAfterDuration`` ends
    it at the horizon. Deterministic in ``spec.seed``.
    """
    return open_loop_arrays(spec).events()


@dataclass
class UserState:
    user: int
    rng: np.random.Generator
    in_flight: bool = False
    issued: int = 0


def closed_loop_users(spec: WorkloadSpec) -> list[UserState]:
    if not isinstance(spec.mode, ClosedLoop):
        raise InvalidWorkload("closed-loop users need a closed-loop workload")
    return [UserState(u, substream(spec.seed, f"user:{u}")) for u in range(spec.mode.users)]


def next_closed_loop_arrival(
    user_state: UserState,
    completion_time: int,
    rng: np.random.Generator | None,
    *,
    think_time_ms: float,
    fraction_text: float,
    request_id: int,
) -> ArrivalEvent:
    """Next request of a closed-loop user: exponential think, fresh class draw."""
    rng = rng if rng is not None else user_state.rng
    think = rng.exponential(think_time_ms / 1e3)
    # Strictly positive think time even when the draw rounds to 0 ns.
    delay = max(1, int(round(think * NS_PER_S)))
    cls = RequestClass.TEXT if rng.random() < fraction_text else RequestClass.IMAGE
    user_state.issued += 1
    return ArrivalEvent(request_id, completion_time + delay, cls)


def split_warmup(traces: Sequence, warmup_ns: int) -> tuple[list, list]:
    """Partition traces (sorted by arrival) into (discarded, measured)."""
    discarded = [t for t in traces if t.arrival_time < warmup_ns]
    measured = [t for t in traces if t.arrival_time >= warmup_ns]
    return discarded, measured


def export_arrivals(events: Iterator[ArrivalEvent], fh) -> int:
    """Write ``request_id scheduled_time_ns class`` lines; returns line count."""
    n = 0
    for ev in events:
        fh.write(f"{ev.request_id} {ev.scheduled_time} {ev.cls.value}\n")
        n += 1
    return n


def poisson_dispersion(times_ns: np.ndarray, window_ns: int) -> float:
    """Variance/mean of per-window arrival counts (1 for a Poisson process)."""
    if len(times_ns) == 0:
        return math.nan
    edges = np.arange(0, int(times_ns[-1]) + 1, window_ns)
    counts, _ = np.histogram(times_ns, bins=edges)
    return float(counts.var() / counts.mean())
