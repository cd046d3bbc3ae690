import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebf import analytics
from ebf.analytics import (
    EmptySamples,
    EmptySweep,
    LogHistogram,
    MissingQualityData,
    NodeNotFound,
    NoneSustains,
    amplification,
    breakdown,
    latency_bounded_throughput,
    latency_report,
    nearest_rank,
    percentile,
    percentiles,
    quality_ensured,
    summarize,
)
from ebf.core import Deterministic, LogNormal, QualityAttr, RequestClass, RequestTrace, Span
from ebf.simengine import run
from ebf.traceset import TraceSet
from ebf.workload import OpenLoop, StopAfterRequests, WorkloadSpec

from conftest import station, topo


def brute(xs, p):
    s = sorted(xs)
    return s[max(1, math.ceil(p / 100 * len(s))) - 1]


def test_percentile_textbook_example():
    xs = list(range(10, 101, 10))
    assert percentile(xs, 90) == 90
    assert percentile(xs, 50) == 50
    assert percentile(xs, 100) == 100
    assert percentile(xs, 0.1) == 10


def test_nearest_rank_decimal_edges():
    # 0.1 * 10 must be rank 1 exactly, 99.9 of 1000 is rank 999
    assert nearest_rank(10, 10) == 1
    assert nearest_rank(99.9, 1000) == 999
    with pytest.raises(ValueError):
        nearest_rank(0, 5)


def test_empty_samples():
    with pytest.raises(EmptySamples):
        percentile([], 50)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.integers(0, 10**9), min_size=1, max_size=2000),
    st.floats(0.01, 100, allow_nan=False),
)
def test_percentile_matches_sort_and_index(xs, p):
    assert percentile(xs, p) == brute(xs, p)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=500))
def test_percentile_monotone_in_p(xs):
    ps = [1, 10, 25, 50, 75, 90, 99, 99.9, 100]
    vals = percentiles(xs, ps)
    seq = [vals[p] for p in ps]
    assert seq == sorted(seq)


def test_log_histogram_relative_error():
    rng = np.random.default_rng(0)
    xs = rng.lognormal(15, 2, 200_000).astype(np.int64) + 1
    h = LogHistogram(0.01)
    h.record(xs[:100_000])
    other = LogHistogram(0.01)
    other.record(xs[100_000:])
    h.merge(other)
    for p in (50, 90, 99, 99.9):
        exact = percentile(xs, p)
        assert abs(h.value_at(p) - exact) / exact <= 0.01 + 1e-12


def test_summarize_switches_to_histogram_above_cap():
    xs = np.arange(1, 10_001) * 1000
    exact = summarize(xs, (50, 99))
    approx = summarize(xs, (50, 99), cap=100)
    assert exact["method"] == "nearest-rank"
    assert approx["method"].startswith("log-histogram")
    for k in exact["percentiles_ms"]:
        assert approx["percentiles_ms"][k] == pytest.approx(exact["percentiles_ms"][k], rel=0.01)


def _two_stage():
    t = topo([station("fast", Deterministic(1.0)), station("slow", LogNormal(3.0, 1.0))])
    res = run(t, WorkloadSpec(OpenLoop(2.0), stop=StopAfterRequests(20_000), seed=1))
    return t, res.traces


def test_amplification_single_node_is_one():
    t = topo([station("only", LogNormal(1.0, 0.5))])
    ts = run(t, WorkloadSpec(OpenLoop(1.0), stop=StopAfterRequests(2000))).traces
    assert amplification(ts, "only") == pytest.approx(1.0)


def test_amplification_of_constant_stage():
    _, ts = _two_stage()
    fast = ts.node_latency("fast")
    # lightly loaded deterministic stage: p99 is its service time unless queued
    assert percentile(fast, 99) == 1_000_000
    assert amplification(ts, "fast") == pytest.approx(percentile(ts.e2e(), 99) / 1e6)


def test_amplification_unknown_node():
    _, ts = _two_stage()
    with pytest.raises(NodeNotFound):
        amplification(ts, "nope")


def test_breakdown_shares_add_up_for_sequences():
    _, ts = _two_stage()
    rows = breakdown(ts, "component")
    assert sum(r.share for r in rows) == pytest.approx(1.0, abs=1e-9)
    assert {r.node for r in rows} == {"fast", "slow"}
    for r in rows:
        assert r.service_mean_ms <= r.mean_ms


def test_breakdown_on_constructed_traces():
    t = topo([station("a"), station("b")])
    traces = []
    for i, (da, db) in enumerate([(1, 3), (2, 6), (3, 9)]):
        ms = 1_000_000
        a = Span("a", 0, 0, da * ms)
        b = Span("b", da * ms, da * ms, (da + db) * ms)
        root = Span("seq#0", 0, 0, (da + db) * ms, [a, b], "seq")
        traces.append(RequestTrace(i, RequestClass.TEXT, 0, (da + db) * ms, root))
    rows = {r.node: r for r in breakdown(traces, "component", topology=t)}
    assert rows["a"].mean_ms == pytest.approx(2.0)
    assert rows["b"].mean_ms == pytest.approx(6.0)
    assert rows["a"].share == pytest.approx(0.25)
    assert rows["b"].p99_ms == pytest.approx(9.0)


@pytest.mark.parametrize(
    "target,achieved,passed",
    [(0.930, 0.9114, True), (0.930, 0.90, False), (0.93, 0.93, True), (0.5, 0.99, True)],
)
def test_quality_ensured_boundary(target, achieved, passed):
    _, ts = _two_stage()
    v = quality_ensured(ts, QualityAttr("acc", target, achieved))
    assert v.passed is passed
    assert (v.stats is not None) is passed


def test_quality_needs_data():
    _, ts = _two_stage()
    with pytest.raises(MissingQualityData):
        quality_ensured(ts, QualityAttr("acc", 0.9))


def test_latency_bounded_throughput():
    sweep = [(1.0, 240.0), (9.1, 420.0), (16.7, 1400.0)]
    assert latency_bounded_throughput(sweep, 500) == 9.1
    assert latency_bounded_throughput(sweep, 5000) == 16.7
    with pytest.raises(NoneSustains):
        latency_bounded_throughput(sweep, 100)
    with pytest.raises(EmptySweep):
        latency_bounded_throughput([], 100)


def test_report_fields_and_empty_flag():
    t, ts = _two_stage()
    rep = latency_report(ts)
    assert rep.count == len(ts)
    assert set(rep.percentiles_ms) >= {"p50", "p90", "p99", "p99.9"}
    assert rep.metadata["percentile_method"] == "nearest-rank"
    assert rep.amplification["fast"] > 1
    empty = latency_report(ts.take(np.zeros(0, dtype=np.int64)))
    assert empty.count == 0 and "empty_measured_set" in empty.flags


def test_breakdown_csv_header():
    _, ts = _two_stage()
    text = analytics.breakdown_csv(breakdown(ts))
    head = text.splitlines()[0].split(",")
    assert head[:6] == ["node", "level", "count", "mean_ms", "p90_ms", "p99_ms"]
    assert len(text.splitlines()) == 3
