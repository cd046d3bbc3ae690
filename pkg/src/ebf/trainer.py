"""Model-update scheduling: how often to retrain, given a measured curve of
accuracy gain against extra training time."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

HOUR_S = 3600.0


class OutOfCurveRange(ValueError):
    pass


class NoCandidates(ValueError):
    pass


class InvalidPolicy(ValueError):
    pass


@dataclass(frozen=True)
class UpdatePolicy:
    """``curve`` holds (extra training-time fraction, accuracy gain) points.

    ``mode`` is ``batch`` (intervals usually hours) or ``streaming``
    (seconds); intervals are always stored in seconds.
    """

    mode: str
    curve: tuple[tuple[float, float], ...]
    base_accuracy: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        if self.mode not in ("batch", "streaming"):
            raise InvalidPolicy(f"mode must be batch or streaming, got {self.mode!r}")
        if not self.curve:
            raise InvalidPolicy("curve needs at least one point")
        xs = [x for x, _ in self.curve]
        if any(x < 0 for x in xs) or any(g < 0 for _, g in self.curve):
            raise InvalidPolicy("curve fractions and gains must be >= 0")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InvalidPolicy("curve fractions must be strictly increasing")
        if not 0 <= self.base_accuracy <= 1:
            raise InvalidPolicy("base accuracy must lie in [0, 1]")

    @property
    def max_fraction(self) -> float:
        return self.curve[-1][0]

    @property
    def max_gain(self) -> float:
        return max(g for _, g in self.curve)


def interpolate_gain(policy: UpdatePolicy, overhead_fraction: float) -> float:
    """Piecewise-linear gain through (0, 0) and the curve points; no extrapolation."""
    x = overhead_fraction
    if x < 0 or x > policy.max_fraction:
        raise OutOfCurveRange(f"overhead {x} outside [0, {policy.max_fraction}]")
    pts = list(policy.curve)
    if pts[0][0] > 0:
        pts.insert(0, (0.0, 0.0))
    for (x0, g0), (x1, g1) in zip(pts, pts[1:]):
        if x0 <= x <= x1:
            if x == x1:
                return g1
            return g0 + (g1 - g0) * (x - x0) / (x1 - x0)
    # Single point at the origin.
    return pts[0][1]


@dataclass(frozen=True)
class TradeoffRecord:
    interval_s: float
    updates: int
    cost_s: float
    overhead_fraction: float
    gain: float | None
    objective: float | None

    @property
    def feasible(self) -> bool:
        return self.objective is not None

    def to_dict(self) -> dict:
        return {
            "interval_s": self.interval_s,
            "updates": self.updates,
            "total_training_cost_s": self.cost_s,
            "overhead_fraction": self.overhead_fraction,
            "accuracy_gain": self.gain,
            "objective": self.objective,
            "feasible": self.feasible,
        }


def evaluate_policy(
    policy: UpdatePolicy,
    horizon_s: float,
    per_update_cost_s: float,
    candidates_s: Sequence[float],
    weight: float | None = None,
) -> list[TradeoffRecord]:
    """Score each candidate update interval over ``horizon_s``.

    updates = floor(horizon / interval); cost = updates * per_update_cost;
    gain = interpolate_gain(cost / horizon); objective = gain - weight * cost / horizon.
    Intervals whose overhead falls outside the curve are returned with
    ``gain``/``objective`` set to None.
    """
    if not candidates_s:
        raise NoCandidates("no candidate intervals")
    if per_update_cost_s < 0:
        raise InvalidPolicy("per-update cost must be >= 0")
    if horizon_s < min(candidates_s):
        raise InvalidPolicy("horizon shorter than the smallest candidate interval")
    w = policy.weight if weight is None else weight
    out = []
    for interval in sorted(candidates_s):
        if interval <= 0:
            raise InvalidPolicy("intervals must be > 0")
        updates = math.floor(horizon_s / interval + 1e-12)
        cost = updates * per_update_cost_s
        frac = cost / horizon_s
        try:
            gain = interpolate_gain(policy, frac)
        except OutOfCurveRange:
            out.append(TradeoffRecord(interval, updates, cost, frac, None, None))
            continue
        out.append(TradeoffRecord(interval, updates, cost, frac, gain, gain - w * frac))
    return out


def choose_interval(records: Sequence[TradeoffRecord], max_interval_s: float | None = None) -> float:
    """Interval with the best objective; ties go to the longer (cheaper) one.

    ``max_interval_s`` encodes a freshness requirement such as hourly updates.
    """
    pool = [r for r in records if r.feasible and (max_interval_s is None or r.interval_s <= max_interval_s)]
    if not pool:
        raise NoCandidates("no feasible candidate interval")
    best = max(pool, key=lambda r: (r.objective, r.interval_s))
    return best.interval_s


def policy_from_dict(d: dict) -> UpdatePolicy:
    return UpdatePolicy(
        d.get("mode", "batch"),
        tuple((float(x), float(g)) for x, g in d["curve"]),
        float(d.get("base_accuracy", 0.0)),
        float(d.get("weight", 1.0)),
    )
