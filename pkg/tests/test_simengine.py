import warnings

import numpy as np
import pytest

from ebf import queuing, simengine
from ebf.core import (
    Branch,
    Deterministic,
    Exponential,
    Leaf,
    LogNormal,
    Par,
    QualityAttr,
    Seq,
    Tier,
    Tiered,
    YieldModel,
    check_span,
    critical_path,
)
from ebf.simengine import TrainingLoad, UnstableSystemWarning, execute_tiered_search, run
from ebf.traceset import FLAG_QUOTA_UNREACHABLE, TraceSet, read_jsonl
from ebf.workload import ClosedLoop, OpenLoop, StopAfterDuration, StopAfterRequests, WorkloadSpec

from conftest import mm1, station, topo


def mixed():
    comps = [
        station("front", LogNormal(0.5, 0.4), servers=2),
        station("left", Exponential(80.0)),
        station("right", LogNormal(1.5, 0.8), servers=2),
        station("text", Exponential(200.0)),
        station("image", Deterministic(12.0)),
        station("t1", Deterministic(0.5)),
        station("t2", Deterministic(1.0)),
        station("back", Exponential(150.0), quality=QualityAttr("acc", 0.9, 0.89)),
    ]
    root = Seq((
        Leaf("front"),
        Par((Leaf("left"), Leaf("right"))),
        Branch("class", (Leaf("text"), Leaf("image")), labels=("text", "image")),
        Tiered((Tier("t1", YieldModel("poisson", 3)), Tier("t2", YieldModel("poisson", 10))), 4),
        Leaf("back"),
    ))
    return topo(comps, root)


def _same(a: TraceSet, b: TraceSet):
    assert np.array_equal(a.request_id, b.request_id)
    assert np.array_equal(a.arrival, b.arrival)
    assert np.array_equal(a.completion, b.completion)
    for k in a.nodes:
        for f in ("enqueue", "start", "end"):
            assert np.array_equal(getattr(a.nodes[k], f), getattr(b.nodes[k], f)), (k, f)
    assert np.array_equal(a.flags, b.flags)


def test_engines_agree_on_open_loop():
    t = mixed()
    wl = WorkloadSpec(OpenLoop(20.0), warmup_s=2, stop=StopAfterRequests(3000), seed=9)
    ff = run(t, wl, engine="feedforward")
    ev = run(t, wl, engine="events")
    _same(ff.traces, ev.traces)
    assert ff.stats.completed == ev.stats.completed == 3000


def test_same_seed_same_traces(tmp_path):
    t = mixed()
    wl = WorkloadSpec(ClosedLoop(20, 500.0), stop=StopAfterRequests(2000), seed=2)
    a, b = run(t, wl), run(t, wl)
    _same(a.traces, b.traces)
    a.traces.write_jsonl(tmp_path / "a.jsonl")
    b.traces.write_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    c = run(t, WorkloadSpec(ClosedLoop(20, 500.0), stop=StopAfterRequests(2000), seed=3))
    assert not np.array_equal(a.traces.completion, c.traces.completion)


@pytest.mark.parametrize(
    "wl",
    [
        WorkloadSpec(OpenLoop(30.0), warmup_s=5, stop=StopAfterRequests(2000), seed=1),
        WorkloadSpec(OpenLoop(30.0), warmup_s=5, stop=StopAfterDuration(60), seed=1),
        WorkloadSpec(ClosedLoop(50, 1000.0), warmup_s=5, stop=StopAfterRequests(2000), seed=1),
        WorkloadSpec(ClosedLoop(50, 1000.0), warmup_s=5, stop=StopAfterDuration(60), seed=1),
    ],
)
def test_conservation(wl):
    res = run(mixed(), wl)
    s = res.stats
    assert s.conserved
    assert s.injected == s.completed + s.in_flight + s.discarded_warmup
    assert len(res.traces) == s.completed
    if isinstance(wl.stop, StopAfterRequests) and isinstance(wl.mode, OpenLoop):
        assert s.completed == 2000 and s.in_flight == 0


def test_every_trace_nests_and_bounds_critical_path():
    res = run(mixed(), WorkloadSpec(OpenLoop(40.0), stop=StopAfterRequests(500), seed=4))
    for tr in res.traces.traces():
        check_span(tr.root_span)
        assert tr.completion_time - tr.arrival_time >= critical_path(tr)
        assert tr.completion_time >= tr.arrival_time


def test_fifo_single_server():
    res = run(mm1(20.0), WorkloadSpec(OpenLoop(15.0), stop=StopAfterRequests(5000), seed=5))
    col = res.traces.nodes["server"]
    order = np.argsort(col.enqueue, kind="stable")
    starts = col.start[order]
    ends = col.end[order]
    assert np.all(np.diff(starts) >= 0)
    # one server: next start never before previous end
    assert np.all(starts[1:] >= ends[:-1])


def test_k_servers_never_exceeded():
    t = topo([station("s", Exponential(10.0), servers=3)])
    res = run(t, WorkloadSpec(OpenLoop(25.0), stop=StopAfterRequests(4000), seed=6))
    c = res.traces.nodes["s"]
    events = sorted([(int(s), 1) for s in c.start] + [(int(e), -1) for e in c.end], key=lambda x: (x[0], x[1]))
    busy = peak = 0
    for _, d in events:
        busy += d
        peak = max(peak, busy)
    assert peak <= 3


def test_littles_law_mm1():
    res = run(mm1(20.0), WorkloadSpec(OpenLoop(9.1), stop=StopAfterRequests(200_000), seed=8))
    L, lw = simengine.littles_law(res.traces)
    assert L == pytest.approx(lw, rel=0.03)


def test_mmk_matches_erlang_c():
    t = topo([station("s", Exponential(10.0), servers=3)])
    res = run(t, WorkloadSpec(OpenLoop(24.0), stop=StopAfterRequests(300_000), seed=12))
    measured = res.traces.e2e().mean() / 1e9
    assert measured == pytest.approx(queuing.mmk_mean(24.0, 10.0, 3), rel=0.03)


def test_deterministic_pipeline_latency_is_sum():
    t = topo([station("a", Deterministic(5)), station("b", Deterministic(10)), station("c", Deterministic(15))])
    res = run(t, WorkloadSpec(OpenLoop(1.0), stop=StopAfterRequests(200), seed=1))
    # 30 ms service, rate 1/s: almost never queues
    assert np.median(res.traces.e2e()) == 30_000_000


def test_tiered_quota_unreachable_flag():
    comps = [station("p"), station("t1"), station("t2")]
    root = Seq((Leaf("p"), Tiered((Tier("t1", YieldModel("deterministic", 1)), Tier("t2", YieldModel("deterministic", 1))), 5)))
    res = run(topo(comps, root), WorkloadSpec(OpenLoop(5.0), stop=StopAfterRequests(50)))
    assert np.all(res.traces.flags & FLAG_QUOTA_UNREACHABLE)
    assert res.stats.quota_unreachable == 50
    assert np.all(res.traces.nodes["t2"].visited)


def test_tiered_stops_once_quota_met():
    comps = [station("p"), station("t1"), station("t2")]
    root = Seq((Leaf("p"), Tiered((Tier("t1", YieldModel("deterministic", 10)), Tier("t2", YieldModel("deterministic", 1))), 5)))
    res = run(topo(comps, root), WorkloadSpec(OpenLoop(5.0), stop=StopAfterRequests(50)))
    assert not res.traces.nodes["t2"].visited.any()
    assert not res.traces.flags.any()


def test_execute_tiered_search_helper():
    yields = [3, 0, 10]

    def probe(i, t):
        from ebf.core import Span

        return Span(f"t{i}", t, t, t + 5), yields[i]

    out = execute_tiered_search([None] * 3, 5, 100, probe)
    assert out.results == 13 and not out.quota_unreachable
    assert out.end_time == 115 and len(out.spans) == 3


def test_class_branch_routes_by_class():
    res = run(mixed(), WorkloadSpec(OpenLoop(20.0), stop=StopAfterRequests(2000), seed=2))
    ts = res.traces
    assert np.array_equal(ts.nodes["image"].visited, ts.cls == 1)
    assert np.array_equal(ts.nodes["text"].visited, ts.cls == 0)


def test_probability_branch_frequencies():
    comps = [station("a"), station("b"), station("c")]
    root = Seq((Leaf("a"), Branch("probability", (Leaf("b"), Leaf("c")), (0.25, 0.75))))
    res = run(topo(comps, root), WorkloadSpec(OpenLoop(10.0), stop=StopAfterRequests(40_000), seed=3))
    assert res.traces.nodes["b"].visited.mean() == pytest.approx(0.25, abs=0.01)


def test_overload_warns():
    with pytest.warns(UnstableSystemWarning):
        run(mm1(20.0), WorkloadSpec(OpenLoop(25.0), stop=StopAfterRequests(2000)))


def test_training_updates_occupy_station():
    t = topo([station("s", Deterministic(1.0))])
    wl = WorkloadSpec(OpenLoop(50.0), stop=StopAfterDuration(100), seed=1)
    base = run(t, wl)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trained = run(t, wl, training=TrainingLoad("s", 10.0, 2.0))
        trained_ev = run(t, wl, training=TrainingLoad("s", 10.0, 2.0), engine="events")
    assert trained.stats.training_updates == 9
    assert trained.traces.e2e().mean() > 5 * base.traces.e2e().mean()
    _same(trained.traces, trained_ev.traces)


def test_trace_file_round_trip(tmp_path):
    res = run(mixed(), WorkloadSpec(OpenLoop(20.0), stop=StopAfterRequests(200), seed=2))
    p = tmp_path / "t.jsonl"
    res.traces.write_jsonl(p)
    back = TraceSet.from_traces(res.traces.topology, read_jsonl(p))
    _same(res.traces, back)
