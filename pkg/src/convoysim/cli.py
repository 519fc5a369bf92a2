"""``convoysim`` command line.

Exit codes: 0 success, 1 lint found errors, 2 usage or validation error,
3 numeric abort during a run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path as FsPath

from .config import load_config, load_physical_spec
from .engine import CONVOY, RunResult, run, sweep
from .errors import ConfigError, ConvoySimError, NumericDomainError, ParamParseError
from .params import ERROR, PhysicalSpec, lint, parse_param_file, serialize_params, table_defaults
from .plotting import TraceFormatError, label_for, plot_runs_png, read_trace_csv, render_svg
from .track import read_path_csv
from .v2v import write_bsm_log, write_delivery_log

log = logging.getLogger("convoysim")

EXIT_OK, EXIT_LINT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "CONVOYSIM_SEED"


def _resolve_seed(flag):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
        if not 0 <= seed < 2**64:
            raise ConfigError(f"{SEED_ENV} must be a 64-bit unsigned integer")
        return seed
    return None


def _u64(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _rates(text):
    try:
        rates = [float(r) for r in text.split(",") if r.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list: {text!r}") from None
    for r in rates:
        if not 0.0 <= r <= 1.0:
            raise argparse.ArgumentTypeError(f"rate {r} outside [0, 1]")
    if len(set(rates)) != len(rates):
        raise argparse.ArgumentTypeError("rates must be distinct")
    return rates


def _write_run(result: RunResult, out: FsPath, figures: bool):
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(result.trace_csv())
    (out / "metrics.json").write_text(result.metrics_json())
    (out / "path.csv").write_text(result.scenario.path.to_csv())
    (out / "bsm.log").write_text(write_bsm_log(result.sent_log))
    (out / "delivery.log").write_text(write_delivery_log(result.delivery_log))
    if figures:
        plot_runs_png(result.scenario.path, [(result.scenario.kind, _traces(result))],
                      out / "trajectories.png")


def _traces(result: RunResult):
    traces = {}
    for r in result.rows:
        traces.setdefault(r.vehicle, []).append((r.x, r.y))
    return traces


def _summary(metrics: dict) -> str:
    rmse = max(metrics["cross_track_rmse"])
    gap = metrics["min_gap"]
    gap_text = "n/a" if gap is None else f"{gap:.4f}"
    return f"RMSE={rmse:.4f} m, min_gap={gap_text} m, collisions={int(metrics['collision'])}"


def cmd_simulate(args) -> int:
    rc = load_config(args.config)
    scenario = rc.build_scenario(args.scenario, seed=_resolve_seed(args.seed))
    result = run(scenario, rc.sim)
    out = FsPath(args.out)
    _write_run(result, out, not args.no_figures)
    print(_summary(result.metrics))
    return EXIT_OK


def cmd_sweep(args) -> int:
    rc = load_config(args.config)
    base = rc.build_scenario(CONVOY, seed=_resolve_seed(args.seed))
    out = FsPath(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = sweep(base, args.rates, rc.sim, jobs=args.jobs)
    entries = []
    for rate, result in results:
        sub = f"rate_{rate:.2f}"
        _write_run(result, out / sub, figures=False)
        entries.append({"rate": rate, "dir": sub, "metrics": result.metrics})
        print(f"rate={rate:.2f}: {_summary(result.metrics)}")
    doc = {"seed": base.seed, "rates": [r for r, _ in results], "runs": entries}
    (out / "sweep.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if not args.no_figures and results:
        runs = [(f"drop {rate * 100:.0f} %", _traces(res)) for rate, res in results]
        plot_runs_png(base.path, runs, out / "sweep.png")
    return EXIT_OK


def cmd_lint(args) -> int:
    params = parse_param_file(FsPath(args.params).read_text())
    spec = load_physical_spec(args.spec) if args.spec else PhysicalSpec()
    diagnostics = lint(params, spec)
    has_error = any(d.severity == ERROR for d in diagnostics)
    if args.json:
        print(json.dumps([d.as_dict() for d in diagnostics], indent=2))
    elif not args.quiet or has_error:
        for d in diagnostics:
            if args.quiet and d.severity != ERROR:
                continue
            print(d.format())
    return EXIT_LINT if has_error else EXIT_OK


def cmd_plot(args) -> int:
    path = read_path_csv(FsPath(args.path).read_text())
    runs = []
    for file in args.traces:
        try:
            traces = read_trace_csv(FsPath(file).read_text())
        except TraceFormatError as exc:
            raise ConfigError(f"{file}: {exc}") from None
        runs.append((label_for(file), traces))
    FsPath(args.out).write_text(render_svg(path, runs))
    if args.png:
        plot_runs_png(path, runs, args.png)
    return EXIT_OK


def cmd_defaults(args) -> int:
    text = serialize_params(table_defaults())
    if args.out:
        FsPath(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convoysim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=_u64, help=f"64-bit seed (fallback: ${SEED_ENV}, then the config)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = sub.add_parser("simulate", help="run one scenario")
    run_flags(p)
    p.add_argument("--scenario", choices=("baseline", "convoy"), default="baseline")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="convoy runs over V2V drop rates")
    run_flags(p)
    p.add_argument("--rates", type=_rates, default=[0.0, 0.2, 0.5], help="comma-separated drop rates")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lint", help="check a parameter file")
    p.add_argument("--params", required=True, help="NAME VALUE parameter file")
    p.add_argument("--spec", help="JSON physical spec (default: built-in vehicle)")
    p.add_argument("--quiet", action="store_true", help="print errors only")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("plot", help="plan-view SVG of trace files")
    p.add_argument("--traces", nargs="+", required=True, help="trace CSV files")
    p.add_argument("--path", required=True, help="reference path CSV")
    p.add_argument("--out", required=True, help="SVG output file")
    p.add_argument("--png", help="also render a PNG with matplotlib")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("defaults", help="print the default parameter set")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericDomainError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(d.format(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParamParseError, ConvoySimError, OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
