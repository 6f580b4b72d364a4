"""
Command-line interface for the low-delay streaming simulator.

This module provides the CLI commands for scaffolding experiment projects,
analysing traces and predictors, running sweeps, and analysing results.
"""

import argparse
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any, cast

import pandas as pd
import yaml
from jinja2 import TemplateNotFound

from .experiments.analysis import (
    DEFAULT_OMEGA_THRESHOLDS,
    DEFAULT_SIGMA_GRID,
    STATUS_OK,
    compare_frontiers,
    emit_example_run,
    operating_region,
    operating_region_frame,
    quality_frontier,
    target_tracking,
)
from .experiments.core import ExperimentRunner, SweepSpec, load_results
from .experiments.output import (
    clean_output_dir,
    ensure_dir,
    get_output_path,
    write_file,
    write_json,
    write_table,
)
from .experiments.renderer import render_report
from .streaming.adaptation import ALGORITHMS, ContractViolation
from .streaming.engine import SimConfig, load_catalog, run_session
from .streaming.error_model import (
    ErrorSide,
    Family,
    FitUnavailableError,
    fit_all_families,
    fit_truncated,
    load_error_table,
    split_errors,
)
from .streaming.predictors import (
    ERROR_QUANTILES,
    ERROR_THRESHOLDS,
    PredictorSpec,
    error_fractions_below,
    error_quantiles,
    evaluate_predictor,
)
from .streaming.traces import (
    ThroughputTrace,
    TraceError,
    bursty_trace,
    constant_trace,
    discover_traces,
    load_trace,
    save_trace,
    summarize_stats,
    trace_stats_table,
)

# ---------------------------------------------------------------------------
# Default scaffolding content embedded as strings so ``init`` works without
# needing to locate installed package data.
# ---------------------------------------------------------------------------

_DEFAULT_CONFIG = """\
# Sweep specification for lowdelay-abr.
# Run with: lowdelay-abr sweep --spec config.yaml
algorithms: [lolypop, festive, lowest]
traces: "traces"
output_dir: "results"
workers: 1

# LOLYPOP targets: skipped-segment fraction and quality-transition fraction
sigma_star: [0.01, 0.02, 0.05, 0.1, 0.2]
omega_star: [0.01, 0.05, 0.1, 0.3]

# FESTIVE grid
festive_alpha: [5, 12, 20]
festive_p: [0.6, 0.85]
festive_k: [1, 4, 10]

# Frontier analysis
sigma_grid: [0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1]
omega_thresholds: [0.02, 0.03, 0.04, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]

sim:
  session_length_s: 300
  tune_in_time_s: 10
  predictor: "SMA:1:ar"
  t_max: 10
  tau: 2
  delta_p: 5
  variation_cv: 0.0
  seed: 0
"""

_DEFAULT_EXAMPLE_RUN = """\
# Single-session configuration for lowdelay-abr example-run
algorithm: lolypop
params:
  sigma_star: 0.05
  omega_star: 0.1
session_length_s: 300
tune_in_time_s: 10
predictor: "SMA:1:ar"
tau: 2
delta_p: 5
"""

# (trace id, high rate, low rate, period, noise cv)
_SAMPLE_TRACES = [
    ("bursty-01", 8e6, 1.5e6, 20, 0.3),
    ("bursty-02", 12e6, 3e6, 30, 0.5),
    ("bursty-03", 4e6, 0.8e6, 10, 0.4),
    ("bursty-04", 20e6, 2e6, 45, 0.6),
]
_SAMPLE_CONSTANT_BPS = 5e6
_SAMPLE_DURATION_S = 400


def _setup_logging(args: argparse.Namespace) -> None:
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(message)s",
    )


def _float_list(text: str) -> list[float]:
    """Parse a comma-separated list of numbers."""
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from e
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from e
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers: {text}")
    return values


def _scale_range(text: str) -> list[int]:
    """Parse ``1..10`` or ``1,2,5`` into prediction horizons."""
    if ".." in text:
        lo_text, hi_text = text.split("..", 1)
        try:
            lo, hi = int(lo_text), int(hi_text)
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"invalid scale range: {text}") from e
        if lo < 1 or hi < lo:
            raise argparse.ArgumentTypeError(f"invalid scale range: {text}")
        return list(range(lo, hi + 1))
    return _int_list(text)


def _load_traces(sources: list[str]) -> list[ThroughputTrace]:
    """Load trace files, expanding directories."""
    traces = []
    for source in sources:
        for path in discover_traces(Path(source)):
            traces.append(load_trace(path))
    if not traces:
        raise FileNotFoundError(f"No trace files found in: {', '.join(sources)}")
    return traces


def cmd_init(args: argparse.Namespace) -> int:
    """
    Scaffold a new experiment project.

    Creates config.yaml (a small sweep), example-run.yaml, and a traces/
    directory with seeded synthetic traces.

    Args:
        args: Parsed command-line arguments (expects ``project_name``)
    """
    project_dir = Path(args.project_name).resolve()

    if project_dir.exists() and any(project_dir.iterdir()):
        print(f"Error: '{args.project_name}' already exists and is not empty")
        return 1

    try:
        traces_dir = project_dir / "traces"
        traces_dir.mkdir(parents=True, exist_ok=True)

        (project_dir / "config.yaml").write_text(_DEFAULT_CONFIG, encoding="utf-8")
        (project_dir / "example-run.yaml").write_text(
            _DEFAULT_EXAMPLE_RUN, encoding="utf-8"
        )

        for seed, (trace_id, high, low, period, cv) in enumerate(_SAMPLE_TRACES):
            trace = bursty_trace(trace_id, _SAMPLE_DURATION_S, high, low, period, cv, seed)
            save_trace(trace, traces_dir / f"{trace_id}.txt")
        save_trace(
            constant_trace("constant-01", _SAMPLE_CONSTANT_BPS, _SAMPLE_DURATION_S),
            traces_dir / "constant-01.txt",
        )

        print(f"Created new experiment project in '{args.project_name}'")
        print(f"  {project_dir}/")
        print("  |-- config.yaml       (sweep specification)")
        print("  |-- example-run.yaml  (single session)")
        print(f"  |-- traces/           ({len(_SAMPLE_TRACES) + 1} synthetic traces)")
        print()
        print("Next steps:")
        print(f"  cd {args.project_name}")
        print("  lowdelay-abr sweep --spec config.yaml")
        print("  lowdelay-abr frontier --results results")
        return 0
    except OSError as e:
        print(f"Error creating project: {e}")
        return 1


def cmd_stats(args: argparse.Namespace) -> int:
    """Per-trace statistics at several sampling intervals."""
    _setup_logging(args)
    try:
        traces = _load_traces(args.traces)
        table = trace_stats_table(traces, args.intervals)
        out = Path(args.out)
        write_table(out, table)
        print(f"Wrote statistics for {len(traces)} traces to {out}")
        if args.summary:
            write_table(Path(args.summary), summarize_stats(table))
            print(f"Wrote summary to {args.summary}")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1
    except TraceError as e:
        print(f"Trace error: {e}")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except OSError as e:
        print(f"Statistics failed: {e}")
        return 1


def cmd_predict_eval(args: argparse.Namespace) -> int:
    """
    Evaluate a throughput predictor on traces.

    Writes the signed errors and, next to them, the per-horizon quantile
    and below-threshold tables.
    """
    _setup_logging(args)
    try:
        spec = PredictorSpec.parse(args.method)
        traces = _load_traces(args.traces)
        t_max = max(args.scales)
        frames = []
        for trace in traces:
            errors = evaluate_predictor(trace, spec, t_max, args.rho_min)
            errors = errors[errors["T"].isin(args.scales)]
            frames.append(errors.assign(trace_id=trace.trace_id))

        errors = pd.concat(frames, ignore_index=True)[["trace_id", "t", "T", "signed_error"]]
        out = Path(args.out)
        quantiles_path = out.with_name(f"{out.stem}_quantiles.csv")
        below_path = out.with_name(f"{out.stem}_below.csv")
        write_table(out, errors)
        write_table(quantiles_path, error_quantiles(errors, args.quantiles))
        write_table(below_path, error_fractions_below(errors, args.thresholds))

        print(f"Evaluated {spec.label} on {len(traces)} traces: {len(errors)} errors")
        print(f"  errors:     {out}")
        print(f"  quantiles:  {quantiles_path}")
        print(f"  fractions:  {below_path}")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1
    except TraceError as e:
        print(f"Trace error: {e}")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except OSError as e:
        print(f"Evaluation failed: {e}")
        return 1


def cmd_fit_errors(args: argparse.Namespace) -> int:
    """Fit truncated distributions to under- and/or overestimation magnitudes."""
    _setup_logging(args)
    try:
        table = load_error_table(Path(args.errors))
        if args.horizon is not None:
            table = table[table["T"] == args.horizon]
        under, over = split_errors(table["signed_error"].to_numpy(dtype=float))
        magnitudes = {ErrorSide.UNDER: under, ErrorSide.OVER: over}
        sides = list(ErrorSide) if args.side == "both" else [ErrorSide(args.side)]

        fits: dict[str, Any] = {}
        for side in sides:
            try:
                if args.family == "all":
                    results = fit_all_families(magnitudes[side], side)
                else:
                    results = [fit_truncated(magnitudes[side], side, args.family)]
            except FitUnavailableError as e:
                logging.getLogger(__name__).warning("No %s fit: %s", side.value, e)
                fits[side.value] = {"unavailable": str(e)}
                continue
            fits[side.value] = [fit.to_dict() for fit in results]
            best = results[0]
            print(
                f"{side.value}: best {best.family.value} "
                f"l2={best.l2_distance:.6g} params={best.params}"
            )

        write_json(
            Path(args.out),
            {"source": str(args.errors), "horizon": args.horizon, "fits": fits},
        )
        print(f"Wrote fits to {args.out}")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except OSError as e:
        print(f"Fit failed: {e}")
        return 1


def cmd_sweep(args: argparse.Namespace) -> int:
    """
    Execute a configuration sweep.

    Relative ``traces`` and ``output_dir`` entries in the sweep spec are resolved
    against the sweep spec file's directory.

    Args:
        args: Parsed command-line arguments
    """
    _setup_logging(args)
    try:
        spec_path = Path(args.spec).resolve()
        spec = SweepSpec.from_yaml(spec_path)
        if args.workers is not None:
            if args.workers < 1:
                raise ValueError(f"workers must be positive, got {args.workers}")
            spec.workers = args.workers

        if args.traces is not None:
            trace_source = Path(args.traces)
        elif spec.traces is not None:
            trace_source = spec_path.parent / spec.traces
        else:
            raise ValueError("No trace source given (set 'traces' in the sweep spec or use --traces)")
        output_dir = Path(args.out) if args.out else spec_path.parent / spec.output_dir

        if args.clean:
            clean_output_dir(output_dir)
        results = ExperimentRunner(spec, output_dir).sweep(trace_source)
        failed = int((results["status"] != STATUS_OK).sum()) if len(results) else 0
        print(f"Wrote {len(results)} result rows to {output_dir / 'results.csv'}")
        if failed:
            print(f"  {failed} rows flagged as errors")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        print("Make sure the sweep spec file and trace directory exist")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except (OSError, RuntimeError, yaml.YAMLError) as e:
        print(f"Sweep failed: {e}")
        return 1


def _algorithms_in(results: Any, requested: str | None) -> list[str]:
    if requested is not None:
        return [requested]
    return sorted(set(results["algorithm"])) if len(results) else []


def cmd_frontier(args: argparse.Namespace) -> int:
    """Quality frontiers, operating regions and target tracking of a sweep."""
    _setup_logging(args)
    try:
        results_dir = Path(args.results)
        results = load_results(results_dir)
        out_dir = Path(args.out) if args.out else results_dir
        ensure_dir(out_dir)

        algorithms = _algorithms_in(results, args.algorithm)
        for algorithm in algorithms:
            frontier = quality_frontier(results, args.sigma, args.omega, algorithm=algorithm)
            path = get_output_path(out_dir, f"frontier_{algorithm}.csv")
            write_table(path, frontier)
            print(f"{algorithm}: {len(frontier)} frontier points -> {path}")

        points = operating_region(results, args.algorithm)
        write_table(out_dir / "operating_region.csv", operating_region_frame(points))
        print(f"Operating region: {len(points)} points")

        if "lolypop" in algorithms:
            write_table(out_dir / "target_tracking.csv", target_tracking(results))
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        print("Run 'sweep' first to produce results.csv")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except OSError as e:
        print(f"Frontier analysis failed: {e}")
        return 1


def cmd_compare(args: argparse.Namespace) -> int:
    """Integral comparison of two algorithms' frontier curves."""
    _setup_logging(args)
    try:
        results_dir = Path(args.results)
        results = load_results(results_dir)
        table = compare_frontiers(
            results, args.a, args.b, args.sigma, args.omega, per_trace=args.per_trace
        )
        out = (
            Path(args.out)
            if args.out
            else get_output_path(results_dir, f"compare_{args.a}_{args.b}.csv")
        )
        write_table(out, table)
        if not args.per_trace:
            for row in table.itertuples(index=False):
                print(f"  omega <= {row.omega_threshold:g}: {row.outcome}")
        else:
            counts = table["outcome"].value_counts().sort_index()
            for outcome, count in counts.items():
                print(f"  {outcome}: {count}")
        print(f"Wrote comparison to {out}")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except OSError as e:
        print(f"Comparison failed: {e}")
        return 1


def cmd_example_run(args: argparse.Namespace) -> int:
    """Simulate one session and write plot-ready series."""
    _setup_logging(args)
    try:
        config = SimConfig.from_yaml(Path(args.config))
        trace = load_trace(Path(args.trace))
        if args.catalog:
            catalog, timeline = load_catalog(Path(args.catalog))
        else:
            catalog, timeline = config.catalog(), config.timeline()

        report = run_session(trace, catalog, timeline, config)
        bundle = emit_example_run(report, trace)

        out_dir = Path(args.out)
        ensure_dir(out_dir)
        write_json(out_dir / "session.json", report.to_dict())
        write_table(out_dir / "events.csv", report.events_frame())
        write_table(out_dir / "throughput.csv", bundle.throughput)
        write_table(out_dir / "representations.csv", bundle.representations)
        write_table(out_dir / "buffer.csv", bundle.buffer)

        print(f"Session on {trace.trace_id} with {report.algorithm}:")
        print(f"  sigma={report.sigma:.4f} omega={report.omega:.4f}")
        if report.mean_repr is not None:
            print(f"  mean representation {report.mean_repr:.3f}")
        print(f"  {report.n_played} played, {report.n_skipped} skipped")
        print(f"Wrote session data to {out_dir}")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1
    except TraceError as e:
        print(f"Trace error: {e}")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except (OSError, ContractViolation, yaml.YAMLError) as e:
        print(f"Simulation failed: {e}")
        return 1


def cmd_report(args: argparse.Namespace) -> int:
    """Render the Markdown and HTML report of a results directory."""
    _setup_logging(args)
    try:
        markdown_text, html = render_report(Path(args.results), title=args.title)
        out = Path(args.out)
        write_file(out, html)
        write_file(out.with_suffix(".md"), markdown_text)
        print(f"Wrote report to {out}")
        return 0
    except FileNotFoundError as e:
        print(f"Error: {e}")
        return 1
    except ValueError as e:
        print(f"Configuration error: {e}")
        return 1
    except (OSError, TemplateNotFound) as e:
        print(f"Report failed: {e}")
        return 1


def _add_verbose(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "-v", "--verbose", action="store_true", default=False, help="Debug logging"
    )


def _add_grids(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--omega",
        type=_float_list,
        default=list(DEFAULT_OMEGA_THRESHOLDS),
        help="Comma-separated omega thresholds",
    )
    parser.add_argument(
        "--sigma",
        type=_float_list,
        default=list(DEFAULT_SIGMA_GRID),
        help="Comma-separated sigma grid",
    )


def create_parser() -> argparse.ArgumentParser:
    """
    Create command-line argument parser.

    Returns:
        Configured ArgumentParser instance
    """
    parser = argparse.ArgumentParser(
        prog="lowdelay-abr",
        description="Trace-driven simulator for low-delay adaptive live streaming",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Init command
    init_parser = subparsers.add_parser("init", help="Initialize new experiment project")
    init_parser.add_argument("project_name", help="Name of the new project")
    init_parser.set_defaults(func=cmd_init)

    # Stats command
    stats_parser = subparsers.add_parser("stats", help="Trace statistics")
    stats_parser.add_argument("traces", nargs="+", help="Trace files or directories")
    stats_parser.add_argument(
        "--intervals",
        type=_int_list,
        default=[1, 2, 5, 10],
        help="Sampling intervals in seconds (default: 1,2,5,10)",
    )
    stats_parser.add_argument("--out", default="stats.csv", help="Output CSV")
    stats_parser.add_argument("--summary", default=None, help="Optional quantile summary CSV")
    _add_verbose(stats_parser)
    stats_parser.set_defaults(func=cmd_stats)

    # Predict-eval command
    predict_parser = subparsers.add_parser(
        "predict-eval", help="Evaluate a throughput predictor"
    )
    predict_parser.add_argument("traces", nargs="+", help="Trace files or directories")
    predict_parser.add_argument(
        "--method", default="SMA:1:ar", help="Predictor, e.g. SMA:1:ar, LinExt:2, HW:3:mse"
    )
    predict_parser.add_argument(
        "--scales", type=_scale_range, default=list(range(1, 11)), help="Horizons, e.g. 1..10"
    )
    predict_parser.add_argument(
        "--quantiles", type=_float_list, default=list(ERROR_QUANTILES)
    )
    predict_parser.add_argument(
        "--thresholds", type=_float_list, default=list(ERROR_THRESHOLDS)
    )
    predict_parser.add_argument(
        "--rho-min", type=float, default=10_000.0, help="Error floor in bits/second"
    )
    predict_parser.add_argument("--out", default="err.csv", help="Signed error CSV")
    _add_verbose(predict_parser)
    predict_parser.set_defaults(func=cmd_predict_eval)

    # Fit-errors command
    fit_parser = subparsers.add_parser("fit-errors", help="Fit prediction error distributions")
    fit_parser.add_argument("errors", help="Error CSV with columns t, T, signed_error")
    fit_parser.add_argument(
        "--family", choices=["all"] + [f.value for f in Family], default="all"
    )
    fit_parser.add_argument(
        "--side", choices=["both"] + [s.value for s in ErrorSide], default="both"
    )
    fit_parser.add_argument("--horizon", type=int, default=None, help="Only this T")
    fit_parser.add_argument("--out", default="fit.json", help="Output JSON")
    _add_verbose(fit_parser)
    fit_parser.set_defaults(func=cmd_fit_errors)

    # Sweep command
    sweep_parser = subparsers.add_parser("sweep", help="Run a configuration sweep")
    sweep_parser.add_argument(
        "--spec", default="config.yaml", help="Sweep spec (default: config.yaml)"
    )
    sweep_parser.add_argument("--traces", default=None, help="Trace directory or file")
    sweep_parser.add_argument("--out", default=None, help="Results directory")
    sweep_parser.add_argument("--workers", type=int, default=None, help="Worker processes")
    sweep_parser.add_argument(
        "--clean",
        action="store_true",
        default=False,
        help="Remove the results directory before writing",
    )
    _add_verbose(sweep_parser)
    sweep_parser.set_defaults(func=cmd_sweep)

    # Frontier command
    frontier_parser = subparsers.add_parser("frontier", help="Quality frontiers of a sweep")
    frontier_parser.add_argument("--results", default="results", help="Results directory")
    frontier_parser.add_argument("--algorithm", choices=ALGORITHMS, default=None)
    frontier_parser.add_argument("--out", default=None, help="Output directory")
    _add_grids(frontier_parser)
    _add_verbose(frontier_parser)
    frontier_parser.set_defaults(func=cmd_frontier)

    # Compare command
    compare_parser = subparsers.add_parser("compare", help="Compare two algorithms")
    compare_parser.add_argument("--results", default="results", help="Results directory")
    compare_parser.add_argument("--a", choices=ALGORITHMS, default="lolypop")
    compare_parser.add_argument("--b", choices=ALGORITHMS, default="festive")
    compare_parser.add_argument(
        "--per-trace",
        action="store_true",
        default=False,
        help="Compare frontiers of every trace instead of the means",
    )
    compare_parser.add_argument("--out", default=None, help="Output CSV")
    _add_grids(compare_parser)
    _add_verbose(compare_parser)
    compare_parser.set_defaults(func=cmd_compare)

    # Example-run command
    example_parser = subparsers.add_parser("example-run", help="Simulate one session")
    example_parser.add_argument("--config", required=True, help="Session config YAML/JSON")
    example_parser.add_argument("--trace", required=True, help="Trace file")
    example_parser.add_argument("--catalog", default=None, help="Optional catalog file")
    example_parser.add_argument("--out", default="example-run", help="Output directory")
    _add_verbose(example_parser)
    example_parser.set_defaults(func=cmd_example_run)

    # Report command
    report_parser = subparsers.add_parser("report", help="Render a sweep report")
    report_parser.add_argument("--results", default="results", help="Results directory")
    report_parser.add_argument("--out", default="report.html", help="Output HTML file")
    report_parser.add_argument("--title", default="Sweep report")
    _add_verbose(report_parser)
    report_parser.set_defaults(func=cmd_report)

    return parser


def main() -> int:
    """
    Main CLI entry point.

    Returns:
        Exit code (0 for success, 1 for error)
    """
    parser = create_parser()

    if len(sys.argv) == 1:
        parser.print_help()
        return 1

    args: argparse.Namespace = parser.parse_args()

    if not hasattr(args, "func"):
        parser.print_help()
        return 1

    command_func = cast(Callable[[argparse.Namespace], int], getattr(args, "func"))
    return command_func(args)


if __name__ == "__main__":
    sys.exit(main())
