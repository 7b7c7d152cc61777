"""Command-line entry point: validate models, run queries and simulations,
serve as a remote run-generation worker.

Exit codes: 0 success (including a rejected hypothesis), 1 user error
(syntax, validation, bad parameters), 2 environment error (I/O, network).
"""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading

from .model import validate
from .output import OutputError, build_cdf, build_histogram, export, filter_trajectory
from .parser import (
    ParseError,
    SimulateQuery,
    format_expr,
    parse_model,
    parse_query,
)
from .runner import (
    RunnerError,
    StatParams,
    StatResult,
    run_parallel,
    run_sequential,
    run_simulate,
)
from .simulator import RunError
from .stat import StatError
from .wire import dispatch_remote, serve_worker

SEED_ENV = "NSMC_SEED"


class _UserError(Exception):
    pass


def _default_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _load_model(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read model {path}: {exc}") from exc
    return parse_model(text)


def _stat_params(args) -> StatParams:
    return StatParams(
        eps=args.epsilon,
        alpha=args.alpha,
        beta=args.beta,
        delta0=args.delta0,
        delta1=args.delta1,
        max_runs=args.max_runs,
        reuse=not args.no_reuse,
    )


def _add_stat_flags(p: argparse.ArgumentParser):
    p.add_argument("--epsilon", type=float, default=0.05, help="estimation half-width (default 0.05)")
    p.add_argument("--alpha", type=float, default=0.05, help="false positive probability (default 0.05)")
    p.add_argument("--beta", type=float, default=0.05, help="false negative probability (default 0.05)")
    p.add_argument("--delta0", type=float, default=0.01, help="upper indifference half-width (default 0.01)")
    p.add_argument("--delta1", type=float, default=0.01, help="lower indifference half-width (default 0.01)")
    p.add_argument("--max-runs", type=int, default=None, help="cap for sequential tests")
    p.add_argument("--no-reuse", action="store_true", help="disable delay reuse")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")


def cmd_validate(args) -> int:
    network = _load_model(args.model)
    diags = validate(network)
    for d in diags:
        print(d)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        print(f"{len(errors)} error(s)")
        return 1
    print("ok")
    return 0


def _print_result(result: StatResult, fmt: str):
    if fmt == "json":
        print(json.dumps(result.to_dict(), indent=2))
        return
    print(f"query: {result.query}")
    print(f"kind: {result.kind}")
    print(f"runs: {result.runs}")
    if result.decision is not None:
        if result.kind == "hyptest":
            verdictext = {
                "H0": "H0 accepted (probability meets the threshold)",
                "H1": "H1 accepted (probability below the threshold)",
                "undecided": "undecided at the run cap",
            }[result.decision]
            print(f"decision: {verdictext}")
        else:
            print(f"decision: {result.decision}")
    if result.p_hat is not None:
        print(f"p_hat: {result.p_hat:.6g}")
    if result.ci is not None and result.alpha is not None:
        lo, hi = result.ci
        print(f"{100 * (1 - result.alpha):g}% CI (Clopper-Pearson): [{lo:.6g}, {hi:.6g}]")
    if result.mean is not None:
        print(f"mean: {result.mean:.6g}")
        print(f"sample_std: {result.sample_std:.6g}")
    if result.level is not None:
        print(f"comparison level: {result.level}")


def _export_samples(result: StatResult, prefix: str, fmt: str, alpha: float):
    if not result.samples:
        print("note: no metric samples to export", file=sys.stderr)
        return
    hist = build_histogram(result.samples)
    cdf = build_cdf(result.samples, alpha)
    export(hist, fmt, f"{prefix}.hist.{fmt}")
    export(cdf, fmt, f"{prefix}.cdf.{fmt}")
    print(f"exported {prefix}.hist.{fmt} and {prefix}.cdf.{fmt}")


def cmd_query(args) -> int:
    network = _load_model(args.model)
    if args.query_file:
        with open(args.query_file, "r", encoding="utf-8") as fh:
            query_text = fh.read().strip()
    else:
        query_text = args.query
    if query_text is None:
        raise _UserError("provide a query string or --query-file")
    query = parse_query(query_text)
    if isinstance(query, SimulateQuery):
        raise _UserError("use the 'simulate' subcommand for simulate queries")
    params = _stat_params(args)
    seed = _default_seed(args.seed)
    if args.remote:
        endpoints = [e.strip() for e in args.remote.split(",") if e.strip()]
        result = dispatch_remote(endpoints, network, query, params, batch=args.batch, seed=seed)
    elif args.cores > 1:
        result = run_parallel(
            network, query, params, cores=args.cores, batch=args.batch, seed=seed
        )
    else:
        result = run_sequential(network, query, params, seed)
    _print_result(result, args.format)
    if args.export:
        _export_samples(result, args.export, args.export_format, params.alpha)
    return 0


def cmd_simulate(args) -> int:
    network = _load_model(args.model)
    query = parse_query(args.query)
    if not isinstance(query, SimulateQuery):
        raise _UserError("the 'simulate' subcommand expects a 'simulate N [bound]{...}' query")
    seed = _default_seed(args.seed)
    runs = run_simulate(network, query, seed)
    fmt = args.format
    written = []
    for r_idx, run in enumerate(runs):
        for e_idx, expr in enumerate(query.exprs):
            label = format_expr(expr)
            series = filter_trajectory(run.series[e_idx], args.resolution, label=label)
            safe = "".join(ch if ch.isalnum() else "_" for ch in label)
            path = f"{args.output}.r{r_idx}.{safe}.{fmt}"
            export(series, fmt, path)
            written.append(path)
    for p in written:
        print(p)
    return 0


def cmd_worker(args) -> int:
    network = _load_model(args.model)
    host, _, port = args.listen.rpartition(":")
    server = serve_worker(network, host or "127.0.0.1", int(port))

    def _stop(signum, frame):
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    print(f"worker serving {args.model} on {server.endpoint}")
    try:
        server.serve_forever(poll_interval=0.2)
    finally:
        server.server_close()
    print("worker stopped")
    return 0


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nsmc", description="Statistical model checker for networks of priced timed automata"
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="static checks on a model file")
    p.add_argument("model")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("query", help="run a Pr/E query")
    p.add_argument("model")
    p.add_argument("query", nargs="?", help="query string (shell-quoted)")
    p.add_argument("--query-file", help="read the query from a file")
    _add_stat_flags(p)
    p.add_argument("--cores", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--batch", type=int, default=64, help="runs per worker per round (default 64)")
    p.add_argument("--remote", help="comma-separated worker endpoints host:port")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--export", metavar="PREFIX", help="export histogram/CDF of the metric samples")
    p.add_argument("--export-format", choices=("csv", "json"), default="csv")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("simulate", help="record trajectories of monitored expressions")
    p.add_argument("model")
    p.add_argument("query", help="simulate N [bound]{expr, ...}")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", type=int, default=1000, help="plot cells per axis (default 1000)")
    p.add_argument("--output", default="trajectory", help="output file prefix")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("worker", help="serve runs to a remote coordinator")
    p.add_argument("model")
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port to bind")
    p.set_defaults(fn=cmd_worker)

    return ap


def main(argv=None) -> int:
    ap = build_arg_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, RunnerError, RunError, StatError, _UserError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, OutputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
