# src/__main__.py
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv  # type: ignore

load_dotenv()

from src.errors import ConfigError, UsageError  # noqa: E402
from src.pipeline_cli import EXIT_ERROR, effective_config, run_coverage, run_instrument  # noqa: E402
from src.utils.load_config import load_config, resolve_config_path  # noqa: E402
from src.utils.log import log, setup_logging  # noqa: E402


def _add_selection_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("granularity")
    group.add_argument("--classes", action="store_true", help="Class probes in every constructor.")
    group.add_argument("--methods", action="store_true", help="Method probes at every method entry.")
    group.add_argument("--statements", action="store_true", help="One probe per original instruction.")
    group.add_argument("--components", action="store_true", help="Activity/Service/Receiver/Provider probes.")
    group.add_argument("--all", action="store_true", help="All of the above.")
    parser.add_argument("--libraries", metavar="PREFIX_FILE",
                        help="File with library package/descriptor prefixes, one per line.")
    parser.add_argument("--exclude-libraries", action="store_true", help="Skip classes matching library prefixes.")
    parser.add_argument("--log-identifier", metavar="TAG", help="Log tag of the probes (default: ANDROLOG).")
    parser.add_argument("--workers", type=int, help="Worker threads for parsing and instrumentation.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smalicov",
                                     description="Instrument smali code for coverage and compute coverage from logs.")
    parser.add_argument("--config", type=Path, help="Configuration file (default: SMALICOV_CONFIG or config.yaml).")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    sub = parser.add_subparsers(dest="command", required=True)

    instrument = sub.add_parser("instrument", help="Insert coverage probes into a smali tree or APK.")
    instrument.add_argument("input", help="Smali directory or APK (APK needs tool hooks).")
    instrument.add_argument("-o", "--output", required=True, help="Output directory.")
    _add_selection_flags(instrument)

    coverage = sub.add_parser("coverage", help="Coverage report from execution logs.")
    coverage.add_argument("app", nargs="?", help="Original app (smali directory or APK), if no --summary is given.")
    coverage.add_argument("--summary", help="app-summary.json written by 'instrument'.")
    coverage.add_argument("--logs", nargs="+", required=True, metavar="FILE", help="Execution log files.")
    coverage.add_argument("--format", choices=["text", "machine"], help="Report format (default: text).")
    coverage.add_argument("--uncovered", action="store_true", help="List uncovered elements (text format).")
    coverage.add_argument("-o", "--output", help="Write the report to a file instead of standard output.")
    _add_selection_flags(coverage)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point. Returns the exit status; usage errors exit with 2 through argparse."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "coverage" and bool(args.app) == bool(args.summary):
        parser.error("coverage needs exactly one of an app path or --summary")

    config_path = resolve_config_path(args.config)
    setup_logging(config_path, force_level=logging.DEBUG if args.verbose else None)
    try:
        config = load_config(config_path)
    except ConfigError as e:
        log(str(e), "ERROR")
        return EXIT_ERROR

    runner = run_instrument if args.command == "instrument" else run_coverage
    try:
        return runner(args, effective_config(args, config))
    except UsageError as e:
        parser.error(str(e))
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
