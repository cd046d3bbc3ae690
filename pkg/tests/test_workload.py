import io

import numpy as np
import pytest

from ebf.core import RequestClass
from ebf.workload import (
    ClosedLoop,
    InvalidRate,
    InvalidWorkload,
    OpenLoop,
    StopAfterDuration,
    StopAfterRequests,
    WorkloadSpec,
    closed_loop_users,
    export_arrivals,
    gen_open_loop,
    next_closed_loop_arrival,
    open_loop_arrays,
    poisson_dispersion,
    substream,
)


def test_rate_must_be_positive():
    with pytest.raises(InvalidRate):
        WorkloadSpec(OpenLoop(0))
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(ClosedLoop(0, 10))
    with pytest.raises(InvalidWorkload):
        WorkloadSpec(OpenLoop(1), fraction_text=1.5)


def test_open_loop_is_poisson():
    spec = WorkloadSpec(OpenLoop(9.1), stop=StopAfterRequests(200_000), seed=3)
    arr = open_loop_arrays(spec)
    gaps = np.diff(arr.scheduled) / 1e9
    assert 1 / gaps.mean() == pytest.approx(9.1, rel=0.01)
    # exponential gaps: coefficient of variation 1
    assert gaps.std() / gaps.mean() == pytest.approx(1.0, rel=0.02)
    assert poisson_dispersion(arr.scheduled, 10**9) == pytest.approx(1.0, abs=0.05)


def test_class_mix():
    arr = open_loop_arrays(WorkloadSpec(OpenLoop(100), stop=StopAfterRequests(100_000), seed=1))
    assert np.mean(arr.cls == 0) == pytest.approx(0.9, abs=0.005)


def test_deterministic_in_seed():
    a = open_loop_arrays(WorkloadSpec(OpenLoop(5), stop=StopAfterRequests(1000), seed=11))
    b = open_loop_arrays(WorkloadSpec(OpenLoop(5), stop=StopAfterRequests(1000), seed=11))
    c = open_loop_arrays(WorkloadSpec(OpenLoop(5), stop=StopAfterRequests(1000), seed=12))
    assert np.array_equal(a.scheduled, b.scheduled) and np.array_equal(a.cls, b.cls)
    assert not np.array_equal(a.scheduled, c.scheduled)


def test_request_count_excludes_warmup():
    spec = WorkloadSpec(OpenLoop(10), warmup_s=30, stop=StopAfterRequests(500), seed=0)
    arr = open_loop_arrays(spec)
    assert np.count_nonzero(arr.scheduled >= spec.warmup_ns) == 500
    assert arr.scheduled[-1] >= spec.warmup_ns


def test_stream_prefix_independent_of_stop_rule():
    short = open_loop_arrays(WorkloadSpec(OpenLoop(10), stop=StopAfterRequests(100), seed=5))
    long = open_loop_arrays(WorkloadSpec(OpenLoop(10), stop=StopAfterDuration(60), seed=5))
    assert np.array_equal(short.scheduled, long.scheduled[:100])
    assert long.scheduled[-1] < 60 * 10**9


def test_zero_requests():
    assert len(open_loop_arrays(WorkloadSpec(OpenLoop(10), stop=StopAfterRequests(0)))) == 0


def test_closed_loop_think_time():
    spec = WorkloadSpec(ClosedLoop(3, 200.0), seed=4)
    users = closed_loop_users(spec)
    assert len(users) == 3
    gaps = []
    for i in range(20_000):
        ev = next_closed_loop_arrival(users[0], 1_000, None, think_time_ms=200.0, fraction_text=0.9, request_id=i)
        assert ev.scheduled_time > 1_000
        gaps.append(ev.scheduled_time - 1_000)
    assert np.mean(gaps) / 1e6 == pytest.approx(200.0, rel=0.03)


def test_user_streams_differ():
    a, b = (u.rng.random() for u in closed_loop_users(WorkloadSpec(ClosedLoop(2, 1.0))))
    assert a != b
    assert substream(0, "user:0").random() != substream(1, "user:0").random()


def test_export_arrivals_lines():
    buf = io.StringIO()
    n = export_arrivals(gen_open_loop(WorkloadSpec(OpenLoop(10), stop=StopAfterRequests(5))), buf)
    lines = buf.getvalue().splitlines()
    assert n == 5 and len(lines) == 5
    rid, t, cls = lines[0].split()
    assert rid == "0" and int(t) > 0 and cls in (RequestClass.TEXT.value, RequestClass.IMAGE.value)
