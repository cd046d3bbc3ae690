"""Run a configuration end to end and assemble the JSON report.

Everything in the report is a deterministic function of the config and
seed except the ``timing`` section, which holds wall-clock facts only.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ebf import __version__, _accel, analytics, queuing, simengine
from ebf.config import RunConfig, config_hash
from ebf.core import NS_PER_S
from ebf.trainer import choose_interval, evaluate_policy, NoCandidates
from ebf.traceset import TraceSet
from ebf.workload import OpenLoop, export_arrivals, open_loop_arrays

SCHEMA = "ebf-report/1"


# ------------------------------------------------------------------ I/O


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, allow_nan=False) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _variant(path: str, lam: float | None, many: bool) -> str:
    if not many or lam is None:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}-lam{lam:g}{p.suffix}"))


# ----------------------------------------------------------------- runs


def _workload_for(cfg: RunConfig, lam: float | None):
    if lam is None:
        return cfg.workload
    return dataclasses.replace(cfg.workload, mode=OpenLoop(lam))


def simulate_point(cfg: RunConfig, lam: float | None) -> tuple[TraceSet, simengine.RunStats]:
    training = None
    tr = cfg.trainer
    if tr is not None and tr.station is not None:
        training = simengine.TrainingLoad(tr.station, tr.interval_s, tr.per_update_cost_s)
    res = simengine.run(cfg.topology, _workload_for(cfg, lam), cfg.seed, training=training, engine=cfg.engine)
    return res.traces, res.stats


def _measured_rate(ts: TraceSet) -> float | None:
    if len(ts) < 2:
        return None
    span = int(ts.arrival.max() - ts.arrival.min())
    return (len(ts) - 1) * NS_PER_S / span if span > 0 else None


def _run_entry(cfg: RunConfig, lam, ts: TraceSet, extra: dict, *, errors=0, timeouts=0, discarded=0):
    an = cfg.analytics
    offered = lam if lam is not None else (
        cfg.workload.mode.rate_per_s if isinstance(cfg.workload.mode, OpenLoop) else None
    )
    rep = analytics.latency_report(
        ts,
        ps=an.percentiles,
        cap=an.histogram_cap,
        warmup_discarded=discarded,
        error_count=errors,
        timeout_count=timeouts,
        offered_rate=offered,
        metadata={"seed": cfg.seed, "config_hash": config_hash(cfg)},
    )
    quality = {}
    for comp in cfg.topology.components:
        if comp.quality is None:
            continue
        try:
            v = analytics.quality_ensured(ts, comp.quality, an.quality_tolerance)
        except analytics.MissingQualityData:
            continue
        quality[comp.id] = {
            "metric": comp.quality.metric,
            "target": comp.quality.target,
            "achieved": v.achieved,
            "threshold": v.threshold,
            "passed": v.passed,
        }
    entry = {
        "lambda_per_s": offered,
        "measured_rate_per_s": _measured_rate(ts),
        "latency": rep.to_dict(),
        "quality_ensured": quality,
        **extra,
    }
    return entry, rep


def _predictions(cfg: RunConfig, runs: list[dict], reports: list) -> dict | None:
    if cfg.queuing is None:
        return None
    q = cfg.queuing
    if q.mu is not None:
        mu, source = q.mu, "configured"
    else:
        mu, source = queuing.effective_service_rate(cfg.topology, cfg.workload.fraction_text), "bottleneck"
    preds, measured, stable_preds = [], [], []
    for run, rep in zip(runs, reports):
        lam = run["lambda_per_s"] if run["lambda_per_s"] is not None else run["measured_rate_per_s"]
        if lam is None:
            continue
        try:
            p = queuing.predict(lam, mu, q.p)
        except queuing.UnstableSystem:
            preds.append({"lambda_per_s": lam, "mu_per_s": mu, "p": q.p, "stable": False})
            continue
        preds.append({**p.to_dict(), "stable": True})
        if rep is not None and rep.count and q.p == 99:
            stable_preds.append(p)
            measured.append(queuing.MeasuredPoint(lam, rep.mean_ms / 1e3, rep.p99_ms / 1e3))
    out = {"mu_per_s": mu, "mu_source": source, "predictions": preds}
    if measured:
        out["gap"] = queuing.gap_report(measured, stable_preds).to_dict()
    return out


def _trainer_section(cfg: RunConfig) -> dict | None:
    tr = cfg.trainer
    if tr is None:
        return None
    recs = evaluate_policy(tr.policy, tr.horizon_s, tr.per_update_cost_s, tr.candidates_s)
    try:
        chosen = choose_interval(recs, tr.max_interval_s)
    except NoCandidates:
        chosen = None
    return {
        "mode": tr.policy.mode,
        "horizon_s": tr.horizon_s,
        "per_update_cost_s": tr.per_update_cost_s,
        "weight": tr.policy.weight,
        "records": [r.to_dict() for r in recs],
        "chosen_interval_s": chosen,
    }


def check_thresholds(cfg: RunConfig, report: dict) -> list[str]:
    th = cfg.thresholds
    bad = []
    for run in report.get("runs", []):
        lat = run["latency"]
        tag = f"lambda={run['lambda_per_s']:g}" if run["lambda_per_s"] is not None else "run"
        if th.mean_ms is not None and lat["count"] and lat["mean_ms"] > th.mean_ms:
            bad.append(f"{tag}: mean {lat['mean_ms']:.3f} ms > {th.mean_ms:g} ms")
        if th.p99_ms is not None and lat["count"] and lat["percentiles_ms"]["p99"] > th.p99_ms:
            bad.append(f"{tag}: p99 {lat['percentiles_ms']['p99']:.3f} ms > {th.p99_ms:g} ms")
        if th.max_errors is not None and lat["error_count"] + lat["timeout_count"] > th.max_errors:
            bad.append(f"{tag}: {lat['error_count'] + lat['timeout_count']} errors > {th.max_errors}")
        if th.quality_ensured:
            for cid, q in run["quality_ensured"].items():
                if not q["passed"]:
                    bad.append(f"{tag}: {cid} quality {q['achieved']:g} below {q['threshold']:g}")
    return bad


def _header(cfg: RunConfig) -> dict:
    return {
        "schema": SCHEMA,
        "tool_version": __version__,
        "name": cfg.name,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "units": {"latency": "ms", "rate": "per_s", "duration": "s"},
    }


def _finish(cfg: RunConfig, report: dict, started: float, wall0: float, out: str | None) -> dict:
    report["thresholds"] = {"violations": check_thresholds(cfg, report)}
    report["timing"] = {
        "started_at": _dt.datetime.fromtimestamp(wall0, _dt.timezone.utc).isoformat(),
        "wall_seconds": time.perf_counter() - started,
        "backend": _accel.BACKEND,
    }
    path = out or cfg.output.report
    if path:
        write_atomic(path, dumps(report))
    return report


def _write_run_outputs(cfg: RunConfig, lam, ts: TraceSet, rep, many: bool) -> None:
    out = cfg.output
    if out.traces:
        ts.write_jsonl(_variant(out.traces, lam, many))
    if out.breakdown_csv:
        write_atomic(_variant(out.breakdown_csv, lam, many), analytics.breakdown_csv(rep.breakdown + rep.modules))
    if out.arrivals and isinstance(_workload_for(cfg, lam).mode, OpenLoop):
        path = _variant(out.arrivals, lam, many)
        with open(path, "w") as fh:
            export_arrivals(open_loop_arrays(_workload_for(cfg, lam)).events(), fh)


def orchestrate(cfg: RunConfig, *, out: str | None = None) -> dict:
    """Simulate (sweeping if configured) and return the report dict."""
    if cfg.mode == "network":
        return orchestrate_network(cfg, out=out)
    started, wall0 = time.perf_counter(), time.time()
    points = list(cfg.sweep) or [None]
    if cfg.parallel and len(points) > 1:
        with ProcessPoolExecutor(len(points)) as pool:
            results = list(pool.map(simulate_point, [cfg] * len(points), points))
    else:
        results = [simulate_point(cfg, lam) for lam in points]
    runs, reports = [], []
    for lam, (ts, stats) in zip(points, results):
        entry, rep = _run_entry(
            cfg, lam, ts, {"stats": stats.to_dict(), "littles_law": _little(ts)},
            discarded=stats.discarded_warmup,
        )
        runs.append(entry)
        reports.append(rep)
        _write_run_outputs(cfg, lam, ts, rep, len(points) > 1)
    report = _header(cfg)
    report["runs"] = runs
    if len(points) > 1:
        report["latency_bounded"] = _bounded(cfg, runs)
    report["queuing"] = _predictions(cfg, runs, reports)
    report["trainer"] = _trainer_section(cfg)
    report["kernels"] = []
    return _finish(cfg, report, started, wall0, out)


def _bounded(cfg: RunConfig, runs: list[dict]) -> dict:
    """Sweep points plus, when a p99 bound is configured, the highest rate meeting it."""
    pts = [(r["lambda_per_s"], r["latency"]["percentiles_ms"].get("p99")) for r in runs]
    out = {"points": [list(p) for p in pts], "bound_p99_ms": cfg.thresholds.p99_ms, "max_rate_per_s": None}
    if cfg.thresholds.p99_ms is not None:
        try:
            out["max_rate_per_s"] = analytics.latency_bounded_throughput(
                [p for p in pts if p[1] is not None], cfg.thresholds.p99_ms)
        except (analytics.EmptySweep, analytics.NoneSustains):
            pass
    return out


def _little(ts: TraceSet) -> dict | None:
    if len(ts) < 2:
        return None
    L, lw = simengine.littles_law(ts)
    return {"mean_in_system": L, "lambda_times_w": lw}


def predict_only(cfg: RunConfig, rates: list[float], *, out: str | None = None) -> dict:
    """Report with queuing predictions and no traces."""
    started, wall0 = time.perf_counter(), time.time()
    report = _header(cfg)
    report["runs"] = []
    fake = [{"lambda_per_s": lam, "measured_rate_per_s": None} for lam in rates]
    report["queuing"] = _predictions(cfg, fake, [None] * len(fake))
    report["trainer"] = _trainer_section(cfg)
    report["kernels"] = []
    return _finish(cfg, report, started, wall0, out)


def orchestrate_network(cfg: RunConfig, *, entry: str | None = None, out: str | None = None) -> dict:
    """Drive a running service cluster and report on it."""
    from ebf.netbench.driver import drive_load, is_loopback

    started, wall0 = time.perf_counter(), time.time()
    entry = entry or cfg.network.address(cfg.topology.entry)
    points = list(cfg.sweep) or [None]
    runs, reports = [], []
    multi_host = not is_loopback(entry) or any(not is_loopback(a) for _, a in cfg.network.addresses)
    for lam in points:
        res = drive_load(entry, cfg.topology, _workload_for(cfg, lam),
                         timeout_s=cfg.network.timeout_s, connections=cfg.network.connections)
        ts = TraceSet.from_traces(cfg.topology, res.traces)
        extra = {
            "stats": {
                "engine": "network",
                "injected": res.injected,
                "completed": len(res.traces),
                "errors": len(res.errors),
                "timeouts": len(res.timeouts),
                "discarded_warmup": res.warmup_discarded,
                "conserved": res.conserved,
            },
            "multi_host": multi_host,
        }
        entry_d, rep = _run_entry(cfg, lam, ts, extra, errors=len(res.errors), timeouts=len(res.timeouts),
                                  discarded=res.warmup_discarded)
        if multi_host:
            entry_d["latency"]["flags"].append("multi_host_clock_domains")
        runs.append(entry_d)
        reports.append(rep)
        _write_run_outputs(cfg, lam, ts, rep, len(points) > 1)
    report = _header(cfg)
    report["runs"] = runs
    report["queuing"] = _predictions(cfg, runs, reports)
    report["trainer"] = _trainer_section(cfg)
    report["kernels"] = []
    return _finish(cfg, report, started, wall0, out)
