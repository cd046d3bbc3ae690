"""Command-line entry point.

Typical workflow: pick components and their service models, compose them
into a topology, write one config file, simulate or serve it, drive load,
then read the report::

    ebf simulate --config run.yaml --out report.json
    ebf serve --component ranker --config run.yaml --listen 127.0.0.1:7004
    ebf drive --entry 127.0.0.1:7001 --config run.yaml --out report.json
    ebf predict --lambda 1.0,9.1,16.7 --mu 20 --p 99
    ebf report report.json

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 threshold violation.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
from importlib.resources import files
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_THRESHOLD = 3

log = logging.getLogger("ebf")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _shape(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.lower().replace(",", "x").split("x") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a shape like 64x64, got {text!r}") from None


def _config_path(arg: str) -> str:
    """A file path, or ``preset:<name>`` for a shipped preset."""
    if arg.startswith("preset:"):
        return str(files("ebf.presets").joinpath(arg.split(":", 1)[1] + ".yaml"))
    return arg


def _load(args):
    from ebf.config import load_config

    return load_config(_config_path(args.config))


def _finish(report: dict, quiet: bool = False) -> int:
    if not quiet:
        print(render(report))
    violations = report.get("thresholds", {}).get("violations", [])
    for v in violations:
        print(f"threshold violated: {v}", file=sys.stderr)
    return EXIT_THRESHOLD if violations else EXIT_OK


# ------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from ebf.orchestrate import orchestrate

    cfg = _load(args)
    if cfg.mode != "simulate":
        cfg = replace(cfg, mode="simulate")
    if args.engine:
        cfg = replace(cfg, engine=args.engine)
    if args.no_sweep:
        cfg = replace(cfg, sweep=())
    if args.traces:
        cfg = replace(cfg, output=replace(cfg.output, traces=args.traces))
    if args.csv:
        cfg = replace(cfg, output=replace(cfg.output, breakdown_csv=args.csv))
    return _finish(orchestrate(cfg, out=args.out), args.quiet)


def cmd_sweep(args) -> int:
    from dataclasses import replace

    from ebf.config import ConstraintViolation
    from ebf.orchestrate import orchestrate
    from ebf.workload import OpenLoop

    cfg = _load(args)
    rates = tuple(args.rates) if args.rates else cfg.sweep
    if not rates:
        raise ConstraintViolation("sweep", "no arrival rates given (config sweep or --rates)")
    if sorted(set(rates)) != list(rates) or min(rates) <= 0:
        raise ConstraintViolation("sweep", "arrival rates must be positive and strictly increasing")
    if not isinstance(cfg.workload.mode, OpenLoop):
        raise ConstraintViolation("sweep", "a rate sweep needs an open-loop workload")
    cfg = replace(cfg, sweep=rates, parallel=args.parallel or cfg.parallel, mode="simulate")
    return _finish(orchestrate(cfg, out=args.out), args.quiet)


def cmd_serve(args) -> int:
    from ebf.netbench.service import serve_component

    cfg = _load(args)
    cfg.topology.component(args.component)
    try:
        asyncio.run(serve_component(cfg, args.component, args.listen))
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_drive(args) -> int:
    from ebf.orchestrate import orchestrate_network

    cfg = _load(args)
    if args.launch:
        from ebf.netbench.launch import Cluster

        with Cluster(cfg, _config_path(args.config), log_level=os.environ.get("EBF_LOG_LEVEL", "WARNING")):
            report = orchestrate_network(cfg, entry=args.entry, out=args.out)
    else:
        report = orchestrate_network(cfg, entry=args.entry, out=args.out)
    return _finish(report, args.quiet)


def cmd_predict(args) -> int:
    from ebf import queuing

    if args.config:
        from dataclasses import replace

        from ebf.config import ConstraintViolation, QueuingOptions
        from ebf.orchestrate import predict_only

        cfg = _load(args)
        rates = list(args.lam or cfg.sweep)
        if not rates:
            raise ConstraintViolation("sweep", "no arrival rates given (config sweep or --lambda)")
        q = cfg.queuing or QueuingOptions()
        cfg = replace(cfg, queuing=replace(q, mu=args.mu if args.mu is not None else q.mu, p=args.p))
        report = predict_only(cfg, rates, out=args.out)
        if args.json:
            from ebf.orchestrate import dumps

            sys.stdout.write(dumps(report))
        return _finish(report, args.quiet or args.json)
    if args.lam is None or args.mu is None:
        from ebf.config import ConfigError

        raise ConfigError("predict needs --lambda and --mu, or --config")
    rows = []
    for lam in args.lam:
        if args.servers > 1:
            mean = queuing.mmk_mean(lam, args.mu, args.servers)
            rows.append({"lambda_per_s": lam, "mu_per_s": args.mu, "servers": args.servers, "mean_ms": mean * 1e3})
        else:
            rows.append(queuing.predict(lam, args.mu, args.p).to_dict())
    if args.json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    pk = f"p{args.p:g}_ms"
    print(f"{'lambda/s':>10} {'mu/s':>8} {'mean ms':>10} {pk.replace('_ms', ' ms'):>10}")
    for r in rows:
        tail = f"{r[pk]:10.2f}" if pk in r else f"{'-':>10}"
        print(f"{r['lambda_per_s']:10g} {r['mu_per_s']:8g} {r['mean_ms']:10.2f} {tail}")
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    import yaml

    from ebf.config import ConstraintViolation, _Obj, _trainer, load_config
    from ebf.trainer import NoCandidates, choose_interval, evaluate_policy

    text = Path(_config_path(args.policy)).read_text()
    data = yaml.safe_load(text)
    if isinstance(data, dict) and "components" in data:
        cfg = load_config(_config_path(args.policy))
        if cfg.trainer is None:
            raise ConstraintViolation("trainer", "config has no trainer section")
        tr = cfg.trainer
    else:
        from ebf.core import Topology

        tr = _trainer(_Obj(data, "trainer"), Topology((), None, ""))
    recs = evaluate_policy(tr.policy, tr.horizon_s, tr.per_update_cost_s, tr.candidates_s, args.weight)
    try:
        chosen = choose_interval(recs, tr.max_interval_s)
    except NoCandidates:
        chosen = None
    if args.json:
        print(json.dumps({"records": [r.to_dict() for r in recs], "chosen_interval_s": chosen}, indent=2))
        return EXIT_OK
    print(f"{'interval s':>12} {'updates':>8} {'cost s':>10} {'overhead':>9} {'gain':>8} {'objective':>10}")
    for r in recs:
        gain = f"{r.gain:8.4f}" if r.feasible else f"{'-':>8}"
        obj = f"{r.objective:10.5f}" if r.feasible else f"{'infeasible':>10}"
        mark = "  *" if r.interval_s == chosen else ""
        print(f"{r.interval_s:12g} {r.updates:8d} {r.cost_s:10g} {r.overhead_fraction:9.4f} {gain} {obj}{mark}")
    return EXIT_OK


def cmd_kernels(args) -> int:
    from ebf import kernels
    from ebf.orchestrate import dumps, write_atomic

    names = kernels.KERNELS if args.name == "all" else (args.name,)
    results = []
    for name in names:
        spec = kernels.KernelSpec(name, shape=args.shape if len(names) == 1 else (), repetitions=args.reps,
                                  kernel_size=args.kernel_size, stride=args.stride, seed=args.seed)
        results.append(kernels.run_kernel(spec).to_dict())
    if args.out:
        path = Path(args.out)
        report = json.loads(path.read_text()) if path.exists() else {"kernels": []}
        report.setdefault("kernels", []).extend(results)
        write_atomic(path, dumps(report))
    print(f"{'kernel':<22} {'shape':<14} {'min us':>10} {'mean us':>10} {'p99 us':>10} {'GFLOP/s':>8}")
    for r in results:
        gf = r["flops"] / r["mean_ns"] if r["flops"] else 0.0
        shape = "x".join(map(str, r["shape"]))
        print(f"{r['name']:<22} {shape:<14} {r['min_ns'] / 1e3:10.2f} {r['mean_ns'] / 1e3:10.2f} "
              f"{r['p99_ns'] / 1e3:10.2f} {gf:8.2f}")
    return EXIT_OK


def cmd_report(args) -> int:
    from ebf.analytics import BreakdownRow, breakdown_csv

    try:
        report = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read report {args.report}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.csv:
        rows = []
        for run in report.get("runs", []):
            for r in run["latency"]["breakdown"] + run["latency"]["modules"]:
                rows.append(BreakdownRow(**r))
        sys.stdout.write(breakdown_csv(rows))
        return EXIT_OK
    print(render(report))
    return EXIT_OK


# ------------------------------------------------------------- output


def _f(v, fmt="8.2f") -> str:
    return "-".rjust(int(fmt.split(".")[0])) if v is None else format(v, fmt)


def render(report: dict) -> str:
    """Human-readable summary of a JSON report."""
    lines = [f"{report.get('name', 'run')}  seed={report.get('seed')}  config={str(report.get('config_hash'))[:12]}"]
    for run in report.get("runs", []):
        lat = run["latency"]
        lam = run.get("lambda_per_s")
        head = f"lambda={lam:g}/s" if lam is not None else f"measured rate={_f(run.get('measured_rate_per_s'), '.2f')}/s"
        pct = "  ".join(f"{k}={_f(v, '.2f')}" for k, v in lat["percentiles_ms"].items())
        lines.append(f"\n{head}  n={lat['count']}  mean={_f(lat['mean_ms'], '.2f')} ms  {pct}")
        if lat["error_count"] or lat["timeout_count"]:
            lines.append(f"  errors={lat['error_count']}  timeouts={lat['timeout_count']}")
        if lat["flags"]:
            lines.append(f"  flags: {', '.join(lat['flags'])}")
        lines.append(f"  {'node':<20} {'level':<9} {'mean':>8} {'p90':>8} {'p99':>8} {'share':>6} {'amp':>7}")
        amp = lat.get("amplification", {})
        for row in lat["modules"] + lat["breakdown"]:
            if not row["count"]:
                continue
            a = amp.get(row["node"])
            lines.append(
                f"  {row['node']:<20} {row['level']:<9} {_f(row['mean_ms'])} {_f(row['p90_ms'])} "
                f"{_f(row['p99_ms'])} {_f(row['share'], '6.3f')} {_f(a, '7.1f')}"
            )
    q = report.get("queuing")
    if q:
        lines.append(f"\nM/M/1 predictions (mu={q['mu_per_s']:.3f}/s, {q['mu_source']})")
        for p in q["predictions"]:
            if p.get("stable"):
                pk = next(k for k in p if k.startswith("p") and k.endswith("_ms"))
                lines.append(f"  lambda={p['lambda_per_s']:g}  mean={p['mean_ms']:.2f} ms  {pk[:-3]}={p[pk]:.2f} ms")
            else:
                lines.append(f"  lambda={p['lambda_per_s']:g}  unstable (lambda >= mu)")
        gap = q.get("gap")
        if gap:
            lines.append(
                f"  measured/predicted: mean x{gap['mean_ratio_arithmetic']:.2f}  p99 x{gap['p99_ratio_arithmetic']:.2f}"
            )
    tr = report.get("trainer")
    if tr:
        lines.append(f"\nmodel updates: chosen interval {tr['chosen_interval_s']} s")
    for k in report.get("kernels", []):
        lines.append(f"kernel {k['name']} {k['shape']}: mean {k['mean_ns'] / 1e3:.2f} us")
    return "\n".join(lines)


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebf", description="End-to-end microservice latency benchmark harness.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the configured topology in the discrete-event simulator")
    s.add_argument("--config", required=True, help="config file or preset:<name>")
    s.add_argument("--out", help="report path (overrides output.report)")
    s.add_argument("--traces", help="write per-request traces as JSON lines")
    s.add_argument("--csv", help="write the breakdown table as CSV")
    s.add_argument("--engine", choices=("auto", "feedforward", "events"))
    s.add_argument("--no-sweep", action="store_true", help="ignore the config's rate sweep")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("sweep", help="simulate across arrival rates")
    s.add_argument("--config", required=True)
    s.add_argument("--rates", type=_floats, help="comma-separated arrival rates (req/s)")
    s.add_argument("--parallel", action="store_true", help="run sweep points concurrently")
    s.add_argument("--out")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("serve", help="run one component as a TCP service")
    s.add_argument("--component", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--listen", required=True, help="host:port")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("drive", help="drive load against a running service cluster")
    s.add_argument("--entry", required=True, help="host:port of the entry service")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--launch", action="store_true", help="start every service locally first")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_drive)

    s = sub.add_parser("predict", help="M/M/1 (or M/M/k) latency predictions")
    s.add_argument("--lambda", dest="lam", type=_floats, help="arrival rate(s), req/s")
    s.add_argument("--mu", type=float, help="service rate, req/s")
    s.add_argument("--p", type=float, default=99.0, help="percentile (default 99)")
    s.add_argument("--servers", type=int, default=1, help="k > 1 uses Erlang C (mean only)")
    s.add_argument("--config", help="write a predict-only report for this config (rates from --lambda or sweep)")
    s.add_argument("--out", help="report path for --config")
    s.add_argument("--quiet", action="store_true")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("tradeoff", help="score model-update intervals")
    s.add_argument("--policy", required=True, help="trainer policy file, or a run config with a trainer section")
    s.add_argument("--weight", type=float, help="override the policy weight")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_tradeoff)

    s = sub.add_parser("kernels", help="time the units of computation")
    ks = s.add_subparsers(dest="kernels_command", required=True)
    k = ks.add_parser("run")
    k.add_argument("--name", required=True, help="kernel name or 'all'")
    k.add_argument("--shape", type=_shape, default=(), help="e.g. 64x64 (fully_connected: BxINxOUT)")
    k.add_argument("--reps", type=int, default=10)
    k.add_argument("--kernel-size", type=int, default=3)
    k.add_argument("--stride", type=int, default=1)
    k.add_argument("--seed", type=int, default=int(os.environ.get("EBF_SEED") or 0))
    k.add_argument("--out", help="append results to this JSON report")
    ks.add_parser("list").set_defaults(fn=lambda a: print("\n".join(__import__("ebf.kernels").kernels.KERNELS)) or 0)
    k.set_defaults(fn=cmd_kernels)

    s = sub.add_parser("report", help="pretty-print a JSON report")
    s.add_argument("report")
    s.add_argument("--csv", action="store_true", help="print the breakdown table as CSV")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("EBF_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")

    from ebf.config import ConfigError
    from ebf.core import InvalidModel, TopologyError
    from ebf.kernels import ShapeMismatch, UnknownKernel
    from ebf.queuing import InvalidPercentile, UnstableSystem
    from ebf.trainer import InvalidPolicy, OutOfCurveRange

    try:
        return args.fn(args)
    except (ConfigError, TopologyError, InvalidModel, InvalidPolicy) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnknownKernel, ShapeMismatch, OutOfCurveRange, UnstableSystem, InvalidPercentile) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 2
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
