#!/usr/bin/env python3
"""
main.py - Command-line entry point for the gridshift simulator

Subcommands:
    gen-sessions   sample one day of charging sessions into <out>/sessions.csv
    analyze-load   low-generation statistics, load histogram, marginal emission curve
    simulate       run one date for one scenario and write schedules and profiles
    compare        sweep the configured dates and write the comparison reports
    report         rebuild the reports from an earlier compare output

Usage:
    python main.py compare --config data/gridshift.env.example --out output

Exit codes: 0 success, 1 config/validation error, 2 infeasible or empty run,
3 file error.
"""

import os
import sys
from argparse import ArgumentParser, Namespace
from datetime import date
from typing import List, Optional

from dotenv import load_dotenv
from loguru import logger

from ev_sessions import HORIZON_HOURS, ScenarioSpec, load_catalog, sample_sessions, write_sessions
from grid_errors import ConfigError, GridShiftError, exit_code_for
from grid_model import load_fleet, load_series, low_generation_stats
from report_builder import emit_day_exports, emit_load_analysis, emit_reports, read_daily_results, summarize
from sim_config import BACKEND_CHOICES, SCENARIO_CHOICES, SCHEME_CHOICES, RunConfig, load_config
from simulator import YearRunner, horizon_start, load_inputs, run_scheme, sample_day

LOG_LEVEL_ENV = "GRIDSHIFT_LOG_LEVEL"


def setup_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format="{time:HH:mm:ss} | {level: <7} | {message}")


# ============================================================================
# ARGUMENTS
# ============================================================================

class CliParser(ArgumentParser):
    """ArgumentParser whose usage errors become ConfigError (exit 1) instead of SystemExit(2)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _parse_date(text: str) -> date:
    return date.fromisoformat(text)


def build_parser() -> ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", help="key=value config file (default: $GRIDSHIFT_CONFIG)")
    common.add_argument("--scenario", choices=SCENARIO_CHOICES)
    common.add_argument("--scheme", choices=SCHEME_CHOICES)
    common.add_argument("--backend", choices=BACKEND_CHOICES)
    common.add_argument("--delta-mwh", type=float, dest="delta_mwh")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="output_dir")
    common.add_argument("--threshold-mw", type=float, dest="threshold_mw")
    common.add_argument("--log-level", dest="log_level", help=f"loguru level (default: ${LOG_LEVEL_ENV} or INFO)")

    parser = CliParser(prog="gridshift", description="EV charging CO2 simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-sessions", parents=[common], help="sample one day of charging sessions")
    gen.add_argument("--n-vehicles", type=int, dest="n_vehicles")

    sub.add_parser("analyze-load", parents=[common], help="low-generation hours and load statistics")

    simulate = sub.add_parser("simulate", parents=[common], help="run one date and export its schedules")
    simulate.add_argument("--date", type=_parse_date, help="YYYY-MM-DD (default: first date of the series)")
    simulate.add_argument("--n-vehicles", type=int, dest="n_vehicles")

    compare = sub.add_parser("compare", parents=[common], help="sweep dates and write comparison reports")
    compare.add_argument("--start-date", type=_parse_date, dest="start_date")
    compare.add_argument("--end-date", type=_parse_date, dest="end_date")
    compare.add_argument("--n-vehicles", type=int, dest="n_vehicles")

    sub.add_parser("report", parents=[common], help="re-summarize an earlier compare output")
    return parser


def config_from_args(args: Namespace) -> RunConfig:
    overrides = {
        "scenarios": [args.scenario] if args.scenario else None,
        "schemes": [args.scheme] if args.scheme else None,
        "backend": args.backend,
        "delta_mwh": args.delta_mwh,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "threshold_mw": args.threshold_mw,
        "n_vehicles": getattr(args, "n_vehicles", None),
        "start_date": getattr(args, "start_date", None),
        "end_date": getattr(args, "end_date", None),
    }
    return load_config(args.config, overrides)


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_gen_sessions(config: RunConfig, args: Namespace) -> int:
    catalog = load_catalog(config.catalog_path)
    scenario = config.scenarios[0]
    sessions = sample_sessions(catalog, ScenarioSpec.for_kind(scenario, config.n_vehicles, config.seed))
    path = write_sessions(sessions, config.output_dir / "sessions.csv")
    print(f"{len(sessions)} {scenario} sessions -> {path}")
    return 0


def cmd_analyze_load(config: RunConfig, args: Namespace) -> int:
    fleet = load_fleet(config.fleet_path)
    series = load_series(config.load_path)
    report = low_generation_stats(series, config.threshold_mw, config.day_window)
    emit_load_analysis(fleet, series, report, config.output_dir)
    print(
        f"below {config.threshold_mw:g} MW: {report.below_hours}/{report.n_hours} hours "
        f"({report.below_fraction:.2%}); in {report.day_window}: {report.below_in_window}, "
        f"outside: {report.below_outside_window}"
    )
    return 0


def cmd_simulate(config: RunConfig, args: Namespace) -> int:
    inputs = load_inputs(config)
    day = args.date or inputs.load.start.date()
    scenario = config.scenarios[0]
    load = inputs.load.window(horizon_start(day, scenario), HORIZON_HOURS)
    sessions = sample_day(config, inputs.catalog, day)[scenario]
    runs = [
        run_scheme(config, inputs.fleet, load, sessions, scheme, day, scenario)
        for scheme in config.schemes
    ]
    emit_day_exports(inputs.fleet, runs, config.output_dir)
    for run in runs:
        print(
            f"{day.isoformat()} {scenario} {run.scheme}: {run.schedule.total_emissions:.3f} t CO2, "
            f"cost {run.schedule.total_cost:.2f}"
        )
    return 0


def cmd_compare(config: RunConfig, args: Namespace) -> int:
    runner = YearRunner(config=config, inputs=load_inputs(config))
    results = runner.run()
    for failure in runner.failures:
        logger.warning(f"[CLI] skipped {failure.date.isoformat()} {failure.scenario}: {failure.reason}")
    summary = summarize(results, config.histogram_bin_pct, config.significance_ton, config.emissions_bin_ton)
    emit_reports(summary, results, config.output_dir)
    print(summary)
    return 0


def cmd_report(config: RunConfig, args: Namespace) -> int:
    results = read_daily_results(config.output_dir)
    summary = summarize(results, config.histogram_bin_pct, config.significance_ton, config.emissions_bin_ton)
    emit_reports(summary, results, config.output_dir, write_profiles=False)
    print(summary)
    return 0


COMMANDS = {
    "gen-sessions": cmd_gen_sessions,
    "analyze-load": cmd_analyze_load,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    try:
        setup_logging(args.log_level or os.getenv(LOG_LEVEL_ENV, "INFO"))
    except ValueError as e:
        print(f"invalid log level: {e}", file=sys.stderr)
        return 1

    try:
        config = config_from_args(args)
        logger.info(f"[CLI] {args.command} with {config.to_dict()}")
        return COMMANDS[args.command](config, args)
    except GridShiftError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"[CLI] file error: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
