# src/pipeline_cli.py
"""
The two analyst commands: `instrument` (smali tree or APK in, instrumented
tree, summary and report out) and `coverage` (summary or original app plus
execution logs in, coverage report out). Testing the instrumented app in
between happens outside this tool.
"""

import json
import shutil
import sys
import tempfile
import time
import traceback
from argparse import Namespace
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterator, List

from src.android_components import parse_component_bases
from src.coverage_core import (
    AppSummary, compute_coverage, dedup_events, load_summary, read_log_files, render_report, save_summary,
    summarize_app,
)
from src.errors import ConfigError, SmaliCovError, UsageError
from src.instrumenter import Granularity, InstrumentationConfig, instrument_app
from src.smali_ir import App
from src.smali_parser import load_app, write_app
from src.tool_hooks import ToolHooks, disassemble, load_hooks, repackage
from src.utils.load_config import PROJECT_ROOT
from src.utils.log import log
from src.utils.pipeline_helpers import merge_configs, normalize_prefix, read_prefix_file

INSTRUMENTED_DIR = "instrumented"
EXIT_OK, EXIT_ERROR = 0, 1


def effective_config(args: Namespace, config: Dict[str, Any]) -> Dict[str, Any]:
    """The loaded configuration with the CLI flags that were given merged over it."""
    return merge_configs(config, {
        "log_identifier": getattr(args, "log_identifier", None),
        "workers": getattr(args, "workers", None),
        "exclude_libraries": True if getattr(args, "exclude_libraries", False) else None,
        "report_format": getattr(args, "format", None),
    })


def resolve_granularities(args: Namespace, config: Dict[str, Any]) -> FrozenSet[Granularity]:
    """Granularity flags, `--all`, or the config default, in that order."""
    if getattr(args, "all", False):
        return frozenset(Granularity)
    chosen = {g for g in Granularity if getattr(args, g.value, False)}
    if not chosen:
        try:
            chosen = {Granularity(str(g).lower()) for g in (config.get("granularities") or [])}
        except ValueError as e:
            raise ConfigError(f"Invalid granularity in config: {e}") from e
    if not chosen:
        raise UsageError("no granularity selected: use --classes, --methods, --statements, --components or --all")
    return frozenset(chosen)


def build_instrumentation_config(args: Namespace, config: Dict[str, Any]) -> InstrumentationConfig:
    prefixes: List[str] = list(config.get("library_prefixes") or [])
    if getattr(args, "libraries", None):
        prefixes.extend(read_prefix_file(Path(args.libraries)))
    normalized = [normalize_prefix(str(p)) for p in prefixes]
    identifier = config.get("log_identifier")
    cfg = InstrumentationConfig(
        identifier=identifier,
        granularities=resolve_granularities(args, config),
        library_prefixes=tuple(normalized),
        exclude_libraries=bool(config.get("exclude_libraries")),
        component_bases=parse_component_bases(config.get("component_bases")),
        workers=int(config.get("workers") or 4),
    )
    try:
        return cfg.validate()
    except ConfigError as e:
        raise UsageError(str(e)) from e


def _hooks_for(config: Dict[str, Any]) -> ToolHooks:
    configured = config.get("hooks_config_path")
    path = None
    if configured:
        path = Path(configured)
        path = path if path.is_absolute() else PROJECT_ROOT / path
    return load_hooks(path)


@contextmanager
def smali_input(path: Path, hooks: ToolHooks) -> Iterator[Path]:
    """A smali directory for `path`: the directory itself, or an APK disassembled into a temporary one."""
    if path.is_dir():
        yield path
        return
    if not path.is_file():
        raise UsageError(f"input not found: {path}")
    if path.suffix.lower() != ".apk":
        raise UsageError(f"input must be a smali directory or an .apk file: {path}")
    if not hooks.supports_apk:
        raise ConfigError("APK input needs disassemble_cmd and assemble_cmd in the hooks file "
                          "(hooks_config_path in config.yaml or SMALICOV_HOOKS)")
    with tempfile.TemporaryDirectory(prefix="smalicov-") as tmp:
        target = Path(tmp) / path.stem
        disassemble(hooks, path, target)
        yield target


def _write_json(data: Dict, path: Path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _copy_tree(source: Path, target: Path):
    if target.exists():
        shutil.rmtree(target)
    shutil.copytree(source, target, ignore=shutil.ignore_patterns("*.smali"))


def run_instrument(args: Namespace, config: Dict[str, Any]) -> int:
    """
    Instruments the input and writes, under `--output`:
      instrumented/                     the input tree with instrumented smali
      app-summary.json                  denominators for later coverage runs
      instrumentation-report.json       probe counts, skipped elements, timings
      <name>-instrumented.apk           when assemble hooks are configured
    """
    started = time.time()
    try:
        cfg = build_instrumentation_config(args, config)
        output = Path(args.output)
        hooks = _hooks_for(config)
        source = Path(args.input)
        with smali_input(source, hooks) as tree:
            app = load_app(tree, workers=cfg.workers, name=source.stem if source.is_file() else None)
            summary = summarize_app(app, cfg)
            instrumented, report = instrument_app(app, cfg)

            output.mkdir(parents=True, exist_ok=True)
            target = output / INSTRUMENTED_DIR
            _copy_tree(tree, target)
            write_app(instrumented, target)

        save_summary(summary, output / config.get("summary_filename", "app-summary.json"))
        _write_json(report.to_dict(), output / config.get("report_filename", "instrumentation-report.json"))

        if hooks.assemble_cmd:
            repackage(hooks, target, output / f"{app.name}-instrumented.apk")
        elif source.is_file():
            log("No assemble hook configured; only the instrumented smali tree was written.", "WARNING")

        log(f"Instrumentation of '{app.name}' finished in {time.time() - started:.2f}s. Output: '{output}'.", "SUCCESS")
        return EXIT_OK
    except UsageError:
        raise
    except SmaliCovError as e:
        log(str(e), "ERROR")
        return EXIT_ERROR
    except OSError as e:
        log(f"File system error: {e}", "ERROR")
        log(traceback.format_exc(), "DEBUG")
        return EXIT_ERROR
    except Exception as e:
        log(f"Unexpected error during instrumentation: {e}", "CRITICAL")
        log(traceback.format_exc(), "DEBUG")
        return EXIT_ERROR


def _summary_for(args: Namespace, config: Dict[str, Any]) -> AppSummary:
    if args.summary:
        summary = load_summary(Path(args.summary))
        log(f"Using app summary '{args.summary}' of '{summary.app}'.", "INFO")
        return summary
    cfg = build_instrumentation_config(args, config)
    source = Path(args.app)
    with smali_input(source, _hooks_for(config)) as tree:
        app: App = load_app(tree, workers=cfg.workers, name=source.stem if source.is_file() else None)
        return summarize_app(app, cfg)


def run_coverage(args: Namespace, config: Dict[str, Any]) -> int:
    """Prints (or writes) the coverage report. Low coverage is data, not failure: exit 0."""
    try:
        summary = _summary_for(args, config)
        identifier = args.log_identifier or summary.identifier
        if identifier != summary.identifier:
            log(f"Log identifier '{identifier}' differs from the one the app was instrumented with "
                f"('{summary.identifier}').", "WARNING")

        scan = read_log_files([Path(p) for p in args.logs], identifier)
        if scan.identifier_hits == 0:
            log(f"No log line carries the identifier '{identifier}': wrong identifier, or the app never ran?",
                "WARNING")
        events = dedup_events(scan.events)
        report = compute_coverage(summary, events)
        if report.malformed:
            log(f"{len(report.malformed)} log payloads after '{identifier}' could not be parsed.", "WARNING")

        fmt = config.get("report_format") or "text"
        rendered = render_report(report, fmt, show_uncovered=args.uncovered)
        if args.output:
            Path(args.output).parent.mkdir(parents=True, exist_ok=True)
            Path(args.output).write_bytes(rendered)
            log(f"Coverage report written to '{args.output}'.", "SUCCESS")
        else:
            sys.stdout.buffer.write(rendered)
            sys.stdout.flush()
        return EXIT_OK
    except UsageError:
        raise
    except SmaliCovError as e:
        log(str(e), "ERROR")
        return EXIT_ERROR
    except OSError as e:
        log(f"Cannot read input: {e}", "ERROR")
        log(traceback.format_exc(), "DEBUG")
        return EXIT_ERROR
    except Exception as e:
        log(f"Unexpected error during coverage computation: {e}", "CRITICAL")
        log(traceback.format_exc(), "DEBUG")
        return EXIT_ERROR
