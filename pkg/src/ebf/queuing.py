"""Closed-form M/M/1 latency predictions and measured-vs-predicted gaps.

For an M/M/1 queue the sojourn time is exponential with rate ``mu - lambda``,
so the mean is ``1/(mu - lambda)`` and the p-th percentile is
``-ln(1 - p/100)/(mu - lambda)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ebf.core import Branch, Leaf, Par, Seq, Tiered, Topology


class UnstableSystem(ValueError):
    pass


class InvalidPercentile(ValueError):
    pass


class MismatchedSettings(ValueError):
    pass


def _check(lam: float, mu: float) -> None:
    if lam < 0 or mu <= 0:
        raise ValueError(f"need lambda >= 0 and mu > 0, got {lam}, {mu}")
    if lam >= mu:
        raise UnstableSystem(f"lambda {lam} >= mu {mu}: queue grows without bound")


def mm1_mean(lam: float, mu: float) -> float:
    """Mean time in system, seconds."""
    _check(lam, mu)
    return 1.0 / (mu - lam)


def mm1_percentile(lam: float, mu: float, p: float) -> float:
    """p-th percentile of time in system, seconds."""
    _check(lam, mu)
    if not 0 < p < 100:
        raise InvalidPercentile(f"percentile must lie in (0, 100), got {p}")
    return -math.log1p(-p / 100.0) / (mu - lam)


@dataclass(frozen=True)
class QueuePrediction:
    lam: float
    mu: float
    p: float
    t_mean: float
    t_p: float

    def to_dict(self) -> dict:
        return {
            "lambda_per_s": self.lam,
            "mu_per_s": self.mu,
            "p": self.p,
            "mean_ms": self.t_mean * 1e3,
            f"p{self.p:g}_ms": self.t_p * 1e3,
        }


def predict(lam: float, mu: float, p: float = 99.0) -> QueuePrediction:
    return QueuePrediction(lam, mu, p, mm1_mean(lam, mu), mm1_percentile(lam, mu, p))


# ---------------------------------------------------------------- M/M/k
# Erlang-C extension; validated against the simulator only.


def erlang_c(lam: float, mu: float, k: int) -> float:
    """Probability an arrival waits in an M/M/k queue."""
    if k < 1:
        raise ValueError("k must be >= 1")
    a = lam / mu
    if a >= k:
        raise UnstableSystem(f"offered load {a:g} >= {k} servers")
    # Iterative Erlang-B, then convert; stable for large k.
    b = 1.0
    for i in range(1, k + 1):
        b = a * b / (i + a * b)
    rho = a / k
    return b / (1 - rho + rho * b)


def mmk_mean_wait(lam: float, mu: float, k: int) -> float:
    """Mean time in queue (excluding service), seconds."""
    return erlang_c(lam, mu, k) / (k * mu - lam)


def mmk_mean(lam: float, mu: float, k: int) -> float:
    """Mean time in system, seconds."""
    return mmk_mean_wait(lam, mu, k) + 1.0 / mu


# --------------------------------------------------------------- gaps


@dataclass(frozen=True)
class MeasuredPoint:
    lam: float
    mean_s: float
    p99_s: float


@dataclass(frozen=True)
class GapRow:
    lam: float
    mean_ratio: float
    p99_ratio: float


@dataclass(frozen=True)
class GapReport:
    rows: tuple[GapRow, ...]
    mean_ratio_avg: float
    p99_ratio_avg: float
    mean_ratio_geo: float
    p99_ratio_geo: float

    def to_dict(self) -> dict:
        return {
            "settings": [
                {"lambda_per_s": r.lam, "mean_ratio": r.mean_ratio, "p99_ratio": r.p99_ratio}
                for r in self.rows
            ],
            "mean_ratio_arithmetic": self.mean_ratio_avg,
            "p99_ratio_arithmetic": self.p99_ratio_avg,
            "mean_ratio_geometric": self.mean_ratio_geo,
            "p99_ratio_geometric": self.p99_ratio_geo,
        }


def _point(m) -> MeasuredPoint:
    if isinstance(m, MeasuredPoint):
        return m
    # LatencyReport: milliseconds, must carry its offered rate.
    if getattr(m, "offered_rate_per_s", None) is None:
        raise MismatchedSettings("measured report carries no offered rate")
    return MeasuredPoint(m.offered_rate_per_s, m.mean_ms / 1e3, m.percentiles_ms["p99"] / 1e3)


def gap_report(measured: Sequence, predicted: Sequence[QueuePrediction], tol: float = 1e-9) -> GapReport:
    """Measured/predicted ratios per arrival rate plus their means.

    Each prediction must have ``p == 99``; measured points are matched to
    predictions by arrival rate.
    """
    points = [_point(m) for m in measured]
    if len(points) != len(predicted) or not points:
        raise MismatchedSettings(f"{len(points)} measured vs {len(predicted)} predicted settings")
    rows = []
    for pt in points:
        match = [q for q in predicted if abs(q.lam - pt.lam) <= tol]
        if len(match) != 1:
            raise MismatchedSettings(f"no unique prediction for lambda={pt.lam}")
        q = match[0]
        if q.p != 99:
            raise MismatchedSettings("gap ratios compare p99; prediction has p != 99")
        rows.append(GapRow(pt.lam, pt.mean_s / q.t_mean, pt.p99_s / q.t_p))
    n = len(rows)
    return GapReport(
        tuple(rows),
        sum(r.mean_ratio for r in rows) / n,
        sum(r.p99_ratio for r in rows) / n,
        math.exp(sum(math.log(r.mean_ratio) for r in rows) / n),
        math.exp(sum(math.log(r.p99_ratio) for r in rows) / n),
    )


# --------------------------------------------------- pipeline capacity


def _poisson_cdf_below(k: int, mean: float) -> float:
    """P(X < k) for X ~ Poisson(mean)."""
    if k <= 0:
        return 0.0
    if mean == 0:
        return 1.0
    return min(1.0, sum(math.exp(j * math.log(mean) - mean - math.lgamma(j + 1)) for j in range(k)))


def visit_probabilities(topology: Topology, fraction_text: float = 0.9) -> dict[str, float]:
    """Expected visits per request to each station."""
    out: dict[str, float] = {}

    def walk(node, w: float) -> None:
        if isinstance(node, Leaf):
            out[node.id] = out.get(node.id, 0.0) + w
        elif isinstance(node, (Seq, Par)):
            for c in node.children:
                walk(c, w)
        elif isinstance(node, Branch):
            if node.by == "probability":
                ws = node.weights
            else:
                ws = [fraction_text if lab == "text" else 1 - fraction_text for lab in node.labels]
            for c, bw in zip(node.children, ws):
                walk(c, w * bw)
        elif isinstance(node, Tiered):
            fixed, mean = 0, 0.0
            for t in node.tiers:
                # Tier i runs iff the yields of tiers before it fall short of the quota.
                out[t.component] = out.get(t.component, 0.0) + w * _poisson_cdf_below(node.quota - fixed, mean)
                if t.yield_model.kind == "deterministic":
                    fixed += int(t.yield_model.value)
                else:
                    mean += t.yield_model.value

    walk(topology.root, 1.0)
    return out


def effective_service_rate(topology: Topology, fraction_text: float = 0.9) -> float:
    """Saturation throughput of the pipeline treated as one server (req/s).

    This is the rate a load test would report as the system's service rate:
    the bottleneck station's ``servers / (visits * mean service time)``.
    """
    visits = visit_probabilities(topology, fraction_text)
    rates = []
    for comp in topology.components:
        v = visits.get(comp.id, 0.0)
        if v > 0:
            rates.append(comp.servers / (v * comp.service_model.mean_s()))
    return min(rates)
