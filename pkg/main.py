#!/usr/bin/env python3
"""
DLRM training kit - Main Entry Point

Runs hybrid-parallel DLRM training benchmarks and prints their reports.
"""

import json
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

# Make the src package importable when run from another directory
sys.path.insert(0, str(Path(__file__).resolve().parent))

from src.bench.costmodel import plan_range, regime_crossover
from src.bench.presets import CLUSTER_SCALE, get_preset, list_presets, parse_overrides, resolve_config
from src.bench.report import IterationReport, RunSpec, compare_reports, scaling_csv
from src.bench.runner import run_benchmark, run_tcp_rank
from src.core.cli_config import create_settings_from_cli, parse_cli_args, rank_range
from src.core.config import TransportKind
from src.core.errors import ConfigError, DlrmKitError
from src.core.logging_config import get_logger, setup_logging
from src.ui.console import ReportConsole

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_KIT_ERROR = 2

logger = get_logger("dlrm_kit")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def handle_special_commands(args, settings, console: ReportConsole) -> bool:
    """Handle CLI commands that don't run a benchmark."""

    if args.list_configs:
        configs = [get_preset(name) for name in list_presets()]
        feasible = [name for name in list_presets() if name not in CLUSTER_SCALE]
        console.print_configs(configs, feasible)
        return True

    if args.plan:
        config = resolve_config(settings.config, parse_overrides(args.override))
        ranks = rank_range(args.ranks, config.S)
        console.print_plans(plan_range(config, ranks, settings.scaling))
        crossover = regime_crossover(config, settings.scaling)
        console.console.print(
            f"alltoall to allreduce crossover: {crossover if crossover else 'none'}"
        )
        return True

    if args.compare:
        base, cand = (IterationReport.load(Path(p)) for p in args.compare)
        row = compare_reports(base, cand)
        if args.csv:
            _emit(scaling_csv([row]).rstrip("\n"), None)
        else:
            console.print_scaling([row])
        return True

    return False


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the DLRM training kit."""
    console = ReportConsole()
    debug = "--debug" in (argv if argv is not None else sys.argv)
    try:
        # Parse command-line arguments
        args = parse_cli_args(argv)

        # Create settings with CLI overrides
        try:
            settings = create_settings_from_cli(args)
        except ValidationError as e:
            raise ConfigError(f"invalid settings: {e}") from e

        # Setup logging
        setup_logging(settings)

        # Handle special commands that don't run training
        if handle_special_commands(args, settings, console):
            return EXIT_OK

        spec = RunSpec.from_settings(settings, parse_overrides(args.override))

        if spec.transport is TransportKind.TCP and settings.rank is not None:
            result = run_tcp_rank(spec, settings.rank)
            _emit(json.dumps(result), settings.out)
            return EXIT_OK

        report = run_benchmark(spec)
        console.print_report(report)
        _emit(report.to_json(), settings.out)
        if settings.out:
            logger.info("report written", path=settings.out)
        return EXIT_OK

    except KeyboardInterrupt:
        console.print_error("interrupted")
        return EXIT_UNEXPECTED
    except DlrmKitError as e:
        logger.error("run failed", error=str(e), kind=type(e).__name__)
        console.print_error(f"{type(e).__name__}: {e}")
        if debug:
            import traceback
            traceback.print_exc()
        return EXIT_KIT_ERROR
    except Exception as e:
        logger.error("unexpected failure", error=str(e), kind=type(e).__name__)
        console.print_error(f"unexpected error: {e}")
        if debug:
            import traceback
            traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
