import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebf.core import Exponential
from ebf.queuing import (
    InvalidPercentile,
    MeasuredPoint,
    MismatchedSettings,
    UnstableSystem,
    effective_service_rate,
    erlang_c,
    gap_report,
    mm1_mean,
    mm1_percentile,
    mmk_mean,
    predict,
    visit_probabilities,
)

from conftest import station, topo

MU = 20.0
RATES = (1.0, 9.1, 16.7)


@pytest.mark.parametrize(
    "lam,mean_ms,p99_ms,published_mean,published_p99",
    [(1.0, 52.63, 242.38, 53, 242), (9.1, 91.74, 422.49, 91, 422), (16.7, 303.03, 1395.51, 303, 1394)],
)
def test_mm1_published_values(lam, mean_ms, p99_ms, published_mean, published_p99):
    assert mm1_mean(lam, MU) * 1e3 == pytest.approx(mean_ms, abs=0.01)
    assert mm1_percentile(lam, MU, 99) * 1e3 == pytest.approx(p99_ms, abs=0.01)
    assert abs(mm1_mean(lam, MU) * 1e3 - published_mean) <= 2
    assert abs(mm1_percentile(lam, MU, 99) * 1e3 - published_p99) <= 2


def test_zero_load_is_service_time():
    assert mm1_mean(0, MU) == pytest.approx(0.05)
    assert mm1_percentile(0, MU, 1e-12) == pytest.approx(0, abs=1e-12)


def test_errors():
    with pytest.raises(UnstableSystem):
        mm1_mean(20, 20)
    with pytest.raises(UnstableSystem):
        predict(25, 20)
    with pytest.raises(InvalidPercentile):
        mm1_percentile(1, 20, 100)
    with pytest.raises(InvalidPercentile):
        mm1_percentile(1, 20, 0)


stable = st.tuples(st.floats(0.0, 1e3), st.floats(1e-3, 1e3)).filter(lambda t: t[0] < t[1] * 0.999)


@settings(max_examples=300, deadline=None)
@given(stable)
def test_median_is_ln2_times_mean(lm):
    lam, mu = lm
    assert mm1_percentile(lam, mu, 50) == pytest.approx(math.log(2) * mm1_mean(lam, mu), rel=1e-12)


@settings(max_examples=300, deadline=None)
@given(stable, st.floats(1e-3, 10))
def test_monotone_in_lambda_and_mu(lm, d):
    lam, mu = lm
    hi = lam + (mu - lam) * d / (d + 1)
    assert mm1_mean(hi, mu) > mm1_mean(lam, mu)
    assert mm1_percentile(hi, mu, 99) > mm1_percentile(lam, mu, 99)
    assert mm1_mean(lam, mu + d) < mm1_mean(lam, mu)


def test_tail_dominates_mean_above_63rd():
    q = predict(5, 20, 64)
    assert q.t_p >= q.t_mean


def test_gap_report_published_triples():
    preds = [predict(lam, MU) for lam in RATES]
    measured = [MeasuredPoint(lam, m / 1e3, t / 1e3) for lam, m, t in zip(RATES, (123, 459, 852), (953, 5008, 11980))]
    g = gap_report(measured, preds)
    assert g.mean_ratio_avg == pytest.approx(3.4, abs=0.05)
    assert g.p99_ratio_avg == pytest.approx(8.1, abs=0.05)
    assert g.mean_ratio_geo < g.mean_ratio_avg


def test_gap_report_against_rounded_predictions():
    # per-setting ratios as printed against the rounded triple 53/91/303
    ratios = [m / p for m, p in zip((123, 459, 852), (53, 91, 303))]
    assert [round(r, 2) for r in ratios] == [2.32, 5.04, 2.81]


def test_gap_identity_and_mismatch():
    preds = [predict(lam, MU) for lam in RATES]
    same = [MeasuredPoint(q.lam, q.t_mean, q.t_p) for q in preds]
    g = gap_report(same, preds)
    assert all(r.mean_ratio == pytest.approx(1) and r.p99_ratio == pytest.approx(1) for r in g.rows)
    with pytest.raises(MismatchedSettings):
        gap_report(same[:2], preds)
    with pytest.raises(MismatchedSettings):
        gap_report([MeasuredPoint(2.0, 1, 1)], [predict(1.0, MU)])
    with pytest.raises(MismatchedSettings):
        gap_report(same[:1], [predict(1.0, MU, 90)])


def test_erlang_c_reduces_to_mm1():
    assert erlang_c(5, 20, 1) == pytest.approx(0.25)
    assert mmk_mean(5, 20, 1) == pytest.approx(mm1_mean(5, 20))


def test_erlang_c_textbook():
    # a = 2 erlangs on 3 servers: C = (8/6 * 3) / (1 + 2 + 2 + 4) = 4/9
    assert erlang_c(2, 1, 3) == pytest.approx(4 / 9)
    with pytest.raises(UnstableSystem):
        erlang_c(3, 1, 3)


def test_effective_service_rate_is_bottleneck():
    t = topo([
        station("a", Exponential(100), servers=2),
        station("b", Exponential(30), servers=1),
    ])
    assert visit_probabilities(t) == {"a": 1.0, "b": 1.0}
    assert effective_service_rate(t) == pytest.approx(30)


def test_visit_probabilities_ecommerce(ecommerce):
    v = visit_probabilities(ecommerce.topology, 0.9)
    assert v["text_classifier"] == pytest.approx(0.9)
    assert v["image_classifier"] == pytest.approx(0.1)
    assert v["search_high"] == pytest.approx(1.0)
    assert 0 < v["search_medium"] < 1
