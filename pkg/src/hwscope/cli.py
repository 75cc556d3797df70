"""Command-line interface for hwscope."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .adapters import ADAPTERS
from .blocks import HeaderBlock, KeyValueBlock, RenderBlock, Style
from .errors import ConfigError, HwscopeError
from .evaluation import store_reproducibility, window_granularity_sweep, write_agreement_table
from .features import WindowSpec, write_feature_matrix
from .formatters import Formatter, get_formatter
from .ingest import align_to_grid, serialize_store, store_from_samples, write_trace
from .injector import (
    InjectionKind,
    dump_scenario,
    load_scenario,
    make_scenario,
    synth_trace,
    write_labels,
)
from .pipeline import (
    SWEEP_THRESHOLDS,
    RunConfig,
    detect_intervals,
    extract_store,
    load_store,
    prune_store,
    resolve_seed,
    run_pipeline,
    select_channels,
)
from .pruning import storage_footprint, write_prune_result, write_sweep
from .registry import dump_registry
from .report import ReportRenderConfig, format_report, load_report
from .timebase import parse_epoch

logger = logging.getLogger(__name__)


class _CliLogFormatter(logging.Formatter):
    """`warning: message`, the way the command line reports problems."""

    def format(self, record: logging.LogRecord) -> str:
        return f"{record.levelname.lower()}: {record.getMessage()}"


def configure_logging(verbose: int = 0, quiet: bool = False) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_CliLogFormatter())
    root = logging.getLogger("hwscope")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _window_list(text: str) -> list[WindowSpec]:
    return [WindowSpec.parse(part) for part in text.split(",") if part.strip()]


def parse_args(argv: list[str] | None = None):
    """Parse command line arguments using subcommands.

    Returns (parser, args) tuple.
    """

    # -- Shared parent: output and verbosity --
    common_parent = argparse.ArgumentParser(add_help=False)
    common_parent.add_argument(
        "--format",
        "-F",
        choices=["ansi", "markdown", "plain"],
        default=None,
        help="Output format (default: ansi if TTY, plain if piped)",
    )
    common_parent.add_argument(
        "-v", "--verbose", action="count", default=0, help="More log output (repeatable)"
    )
    common_parent.add_argument("-q", "--quiet", action="store_true", help="Errors only")
    common_parent.add_argument("--out", type=Path, help="Output directory (trace file for ingest)")
    common_parent.add_argument("--seed", type=int, default=None, help="Top-level seed (default: $REVEAL_SEED or 0)")

    # -- Shared parent: trace input --
    input_parent = argparse.ArgumentParser(add_help=False)
    input_parent.add_argument(
        "--trace",
        action="append",
        dest="traces",
        type=Path,
        default=[],
        metavar="PATH",
        help="Canonical trace file (repeatable, one or more hosts each)",
    )
    input_parent.add_argument("--registry", type=Path, help="Metric registry file")
    input_parent.add_argument("--derived", type=Path, help="Derived-metric spec CSV")
    input_parent.add_argument(
        "--interval-ms", dest="interval_ms", type=int, default=None, help="Grid interval (default: header or 100)"
    )
    input_parent.add_argument("--workers", type=int, default=1, help="Worker threads")

    # -- Shared parent: channel selection and windows --
    window_parent = argparse.ArgumentParser(add_help=False)
    window_parent.add_argument(
        "--windows", default="3000/1000", metavar="SIZE/STRIDE", help="Window size/stride in ms"
    )
    window_parent.add_argument(
        "--threshold-r", dest="threshold_r", type=float, default=0.5, help="Pruning |r| threshold"
    )
    selection = window_parent.add_mutually_exclusive_group()
    selection.add_argument("--prune", action="store_true", help="Prune channels before extraction")
    selection.add_argument("--retained", type=Path, help="Precomputed prune result file")

    # -- Shared parent: detectors and report --
    detect_parent = argparse.ArgumentParser(add_help=False)
    detect_parent.add_argument("--percentile", type=float, default=0.99, help="Score percentile cut")
    detect_parent.add_argument("--trees", type=int, default=100, help="Isolation forest trees")
    detect_parent.add_argument("--subsample", type=int, default=256, help="Isolation forest subsample")
    detect_parent.add_argument(
        "--variance-retained", dest="variance_retained", type=float, default=0.95, help="PCA variance fraction"
    )
    detect_parent.add_argument(
        "--min-agreement", dest="min_agreement", type=int, default=1, help="Detectors needed to report a window"
    )

    render_parent = argparse.ArgumentParser(add_help=False)
    render_parent.add_argument("--mode", choices=["per-host", "aggregated"], default="per-host")
    render_parent.add_argument("--top-k", dest="top_k", type=int, default=5, help="Reasons per window")
    render_parent.add_argument(
        "--cross-host-cut", dest="cross_host_cut", type=float, default=3.0, help="Robust-sigma cut"
    )
    render_parent.add_argument("--epoch", metavar="DATETIME", help="Wall-clock time of t=0 ('trace', ms, or date)")
    render_parent.add_argument("--evidence", action="store_true", help="Show detector evidence per window")

    # -- Main parser --
    parser = argparse.ArgumentParser(
        prog="hwscope",
        description="Host-level hardware telemetry anomaly detection and attribution",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    %(prog)s ingest --adapter perf-stat --host h1 perf.csv --out t.csv
    %(prog)s prune --trace t.csv --threshold-r 0.5 --out run/
    %(prog)s extract --trace t.csv --retained run/prune.csv --out run/
    %(prog)s detect --trace t.csv --windows 3000/1000 --out run/
    %(prog)s detect --trace a.csv --trace b.csv --mode aggregated
    %(prog)s report run/report.json --min-agreement 2
    %(prog)s eval --trace t.csv --configs 3000/1000,1500/500,5000/2000
    %(prog)s synth --scenario s.json --seed 7 --out synth/
        """,
    )

    from importlib.metadata import version as pkg_version

    try:
        hwscope_version = pkg_version("hwscope")
    except Exception:
        hwscope_version = "unknown"
    parser.add_argument("--version", action="version", version=f"hwscope {hwscope_version}")

    subparsers = parser.add_subparsers(dest="command", required=True)

    ingest_parser = subparsers.add_parser(
        "ingest",
        parents=[common_parent, input_parent],
        help="Normalize raw collector output or re-grid a trace",
    )
    ingest_parser.add_argument("raw", nargs="*", type=Path, help="Raw collector files (with --adapter)")
    ingest_parser.add_argument("--adapter", choices=sorted(ADAPTERS), help="Raw input format")
    ingest_parser.add_argument("--host", default="host0", help="Host name for raw input")

    prune_parser = subparsers.add_parser(
        "prune", parents=[common_parent, input_parent], help="Correlation-based channel pruning"
    )
    prune_parser.add_argument(
        "--threshold-r", dest="threshold_r", type=float, default=0.5, help="Pruning |r| threshold"
    )
    prune_parser.add_argument("--sweep", action="store_true", help="Also write threshold-sweep diagnostics")

    subparsers.add_parser(
        "extract",
        parents=[common_parent, input_parent, window_parent],
        help="Write the window feature matrix",
    )
    subparsers.add_parser(
        "detect",
        parents=[common_parent, input_parent, window_parent, detect_parent, render_parent],
        help="Run the full pipeline and print the report",
    )

    report_parser = subparsers.add_parser(
        "report", parents=[common_parent], help="Re-render a report JSON file"
    )
    report_parser.add_argument("report", type=Path, help="report.json from a detect run")
    report_parser.add_argument("--min-agreement", dest="min_agreement", type=int, default=None)
    report_parser.add_argument("--evidence", action="store_true", help="Show detector evidence per window")

    eval_parser = subparsers.add_parser(
        "eval",
        parents=[common_parent, input_parent, detect_parent],
        help="Window-granularity agreement and run reproducibility",
    )
    eval_parser.add_argument(
        "--configs", default="3000/1000,1500/500,5000/2000", help="Comma-separated SIZE/STRIDE settings"
    )
    eval_parser.add_argument(
        "--reproducibility", action="store_true", help="Treat the traces as repeated runs and test them"
    )

    synth_parser = subparsers.add_parser(
        "synth", parents=[common_parent], help="Generate a labeled synthetic trace"
    )
    synth_parser.add_argument("--scenario", type=Path, help="Scenario JSON (default: built-in)")
    synth_parser.add_argument(
        "--windows", default="3000/1000", metavar="SIZE/STRIDE", help="Window setting for labels"
    )
    synth_parser.add_argument("--n-windows", dest="n_windows", type=int, default=1000)
    synth_parser.add_argument("--channels", type=int, default=20)
    synth_parser.add_argument("--injections", type=int, default=8)
    synth_parser.add_argument("--magnitude", type=float, default=8.0)
    synth_parser.add_argument(
        "--kind", choices=[k.value for k in InjectionKind], default=InjectionKind.MEAN_SHIFT.value
    )
    synth_parser.add_argument("--hosts", type=int, default=1)

    args = parser.parse_args(argv)
    return parser, args


def _build_config(args: argparse.Namespace) -> RunConfig:
    """Build a RunConfig from parsed arguments."""
    config = RunConfig(
        traces=list(getattr(args, "traces", []) or []),
        registry_path=getattr(args, "registry", None),
        derived_path=getattr(args, "derived", None),
        interval_ms=getattr(args, "interval_ms", None),
        seed=resolve_seed(args.seed),
        out=args.out,
        workers=getattr(args, "workers", 1),
    )
    if getattr(args, "windows", None):
        config.windows = WindowSpec.parse(args.windows)
    for name in (
        "threshold_r",
        "percentile",
        "variance_retained",
        "top_k",
        "cross_host_cut",
        "mode",
        "epoch",
        "retained",
        "min_agreement",
    ):
        value = getattr(args, name, None)
        if value is None:
            continue
        setattr(config, "retained_path" if name == "retained" else name, value)
    if getattr(args, "prune", False):
        config.prune = True
    if getattr(args, "trees", None) is not None:
        config.n_trees = args.trees
    if getattr(args, "subsample", None) is not None:
        config.subsample = args.subsample
    if config.interval_ms is not None and config.interval_ms <= 0:
        raise ConfigError(f"--interval-ms must be positive, got {config.interval_ms}")
    if not 1 <= config.min_agreement <= 3:
        raise ConfigError(f"--min-agreement must be 1, 2 or 3, got {config.min_agreement}")
    if config.epoch is not None:
        # `trace` can only be resolved once a trace is loaded
        parse_epoch(config.epoch, trace_epoch_ms=0)
    return config


def _build_formatter(args: argparse.Namespace) -> Formatter:
    """Select the output formatter based on args and environment."""
    output_format = args.format
    if output_format is None:
        output_format = "ansi" if sys.stdout.isatty() else "plain"
    return get_formatter(output_format)


def _summary(title: str, items: dict[str, object]) -> list[RenderBlock]:
    blocks: list[RenderBlock] = [HeaderBlock(text=title, level=2, styles={Style.INFO})]
    blocks.extend(KeyValueBlock(key=k, value=str(v)) for k, v in items.items())
    return blocks


def handle_ingest(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'ingest' subcommand."""
    registry = config.load_registry()
    if args.adapter:
        if not args.raw:
            print("error: --adapter needs at least one raw input file", file=sys.stderr)
            return 1
        adapter = ADAPTERS[args.adapter]
        samples = []
        for path in args.raw:
            samples.extend(adapter(path.read_text(encoding="utf-8"), args.host))
        store = store_from_samples(samples, registry, config.interval_ms or 100)
    else:
        if args.raw:
            print("error: raw input files need --adapter", file=sys.stderr)
            return 1
        store = load_store(config, registry)
        if config.interval_ms is not None:
            store = align_to_grid(store, config.interval_ms)

    if config.out is None:
        sys.stdout.write(serialize_store(store))
        return 0
    config.out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(store, config.out)
    print(
        formatter.format(
            _summary(
                "Ingested",
                {
                    "Hosts": ", ".join(store.hosts()),
                    "Channels": len(store.channels()),
                    "Interval": f"{store.interval_ms} ms",
                    "Malformed records": store.malformed_count,
                    "Trace": config.out,
                },
            )
        ),
        end="",
    )
    return 0


def handle_prune(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'prune' subcommand."""
    store = load_store(config)
    result, sweep = prune_store(store, config.threshold_r, SWEEP_THRESHOLDS if args.sweep else None)
    before = storage_footprint(len(result.candidates()), store.interval_ms)
    after = storage_footprint(len(result.retained), store.interval_ms)
    items: dict[str, object] = {
        "Threshold": f"|r| > {result.threshold:g}",
        "Retained": len(result.retained),
        "Redundant": len(result.redundant),
        "Static": len(result.static),
        "Storage per day": f"{before[1] / 1e6:.1f} MB -> {after[1] / 1e6:.1f} MB",
    }
    if config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        write_prune_result(result, config.out / "prune.csv")
        items["Prune result"] = config.out / "prune.csv"
        if sweep is not None:
            write_sweep(sweep, config.out / "sweep.csv")
            items["Sweep"] = config.out / "sweep.csv"
    print(formatter.format(_summary("Pruning", items)), end="")
    return 0


def handle_extract(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'extract' subcommand."""
    store = load_store(config)
    channels, result = select_channels(store, config)
    built = extract_store(store, config.windows, channels, config.workers)
    rows, columns = built.matrix.shape
    items: dict[str, object] = {
        "Windows": f"{rows} ({config.windows.label()})",
        "Columns": columns,
        "Dropped columns": len(built.dropped),
    }
    if config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        write_feature_matrix(built.matrix, config.out / "features.csv")
        items["Feature matrix"] = config.out / "features.csv"
        if result is not None and config.prune:
            write_prune_result(result, config.out / "prune.csv")
    print(formatter.format(_summary("Features", items)), end="")
    return 0


def handle_detect(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'detect' subcommand."""
    result = run_pipeline(config)
    render = ReportRenderConfig(show_evidence=args.evidence)
    print(format_report(result.document, formatter, render), end="")
    for path in result.artifacts:
        logger.info("wrote %s", path)
    return 0


def handle_report(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'report' subcommand."""
    document = load_report(args.report)
    if args.min_agreement is not None:
        document = document.at_agreement(args.min_agreement)
    render = ReportRenderConfig(show_evidence=args.evidence)
    print(format_report(document, formatter, render), end="")
    return 0


def handle_eval(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'eval' subcommand."""
    registry = config.load_registry()
    stores = [
        load_store(RunConfig(traces=[p], interval_ms=config.interval_ms, derived_path=config.derived_path), registry)
        for p in config.traces
    ]
    if not stores:
        print("error: no trace given (use --trace)", file=sys.stderr)
        return 1

    blocks: list[RenderBlock] = []
    if args.reproducibility:
        checks = store_reproducibility(stores, config.seed)
        reproducible = sum(1 for c in checks.values() if c.reproducible)
        blocks += _summary(
            "Reproducibility",
            {"Runs": len(stores), "Channels": len(checks), "Reproducible": reproducible},
        )
    else:
        configs = _window_list(args.configs)
        summaries = window_granularity_sweep(
            stores,
            configs,
            lambda store, spec: detect_intervals(store, spec, config),
            workers=config.workers,
        )
        blocks += _summary(
            "Window agreement",
            {
                s.pair: f"hit/count {s.hit_count_mean:.2f}  hit/length {s.hit_len_mean:.2f}  IoU {s.iou_median:.2f}"
                + (f"  vacuous {s.vacuous}/{s.samples}" if s.vacuous else "")
                for s in summaries
            },
        )
        if config.out is not None:
            config.out.mkdir(parents=True, exist_ok=True)
            write_agreement_table(summaries, config.out / "agreement.csv")
    print(formatter.format(blocks), end="")
    return 0


def handle_synth(args: argparse.Namespace, config: RunConfig, formatter: Formatter) -> int:
    """Handle the 'synth' subcommand."""
    spec = WindowSpec.parse(args.windows)
    if args.scenario is not None:
        scenario = load_scenario(args.scenario)
        scenario = scenario.model_copy(update={"seed": config.seed}) if args.seed is not None else scenario
    else:
        scenario = make_scenario(
            n_windows=args.n_windows,
            n_channels=args.channels,
            n_injections=args.injections,
            magnitude=args.magnitude,
            kind=InjectionKind(args.kind),
            hosts=args.hosts,
            seed=config.seed,
            spec=spec,
        )
    result = synth_trace(scenario, spec)
    if config.out is None:
        sys.stdout.write(serialize_store(result.store))
        return 0
    config.out.mkdir(parents=True, exist_ok=True)
    write_trace(result.store, config.out / "trace.csv")
    write_labels(result, config.out / "labels.csv")
    dump_scenario(scenario, config.out / "scenario.json")
    (config.out / "registry.csv").write_text(dump_registry(result.store.registry), encoding="utf-8")
    truth = sum(len(ids) for ids in result.labels.values())
    print(
        formatter.format(
            _summary(
                "Synthetic trace",
                {
                    "Hosts": scenario.hosts,
                    "Channels": len(scenario.channels),
                    "Injections": len(scenario.injections),
                    "Labeled windows": truth,
                    "Seed": scenario.seed,
                    "Output": config.out,
                },
            )
        ),
        end="",
    )
    return 0


HANDLERS = {
    "ingest": handle_ingest,
    "prune": handle_prune,
    "extract": handle_extract,
    "detect": handle_detect,
    "report": handle_report,
    "eval": handle_eval,
    "synth": handle_synth,
}


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""

    parser, args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        config = _build_config(args)
        formatter = _build_formatter(args)
        handler = HANDLERS.get(args.command)
        if handler is None:
            parser.print_help()
            return 1
        return handler(args, config, formatter)
    except HwscopeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValidationError as e:
        print(f"error: invalid value: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    exit_code: int = 0
    try:
        exit_code = main()
    except KeyboardInterrupt:
        print("\nexiting", file=sys.stderr)

    sys.exit(exit_code)
