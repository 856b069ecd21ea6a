# src/coverage_core.py
"""
App summary, execution-log parsing and coverage computation.

The summary is built from the original app with the same filters and
eligibility rules the instrumenter applies, so its element ids are exactly
the payloads the probes log. Coverage per kind is then a set intersection
between those ids and the deduplicated payloads found in the logs.
"""

import json
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

from tabulate import tabulate

from src.errors import AlreadyInstrumentedError, SmaliCovError
from src.instrumenter import (
    InstrumentationConfig, component_kinds, find_logchecker, plan_class,
)
from src.smali_ir import App, ProbeKind, parse_statement_body, split_payload
from src.utils.log import log

SUMMARY_FORMAT_VERSION = 1
_CENT = Decimal("0.01")


@dataclass(frozen=True)
class AppSummary:
    app: str
    identifier: str
    element_ids: Mapping[ProbeKind, FrozenSet[str]]
    skipped: Mapping[ProbeKind, int]
    config: InstrumentationConfig
    excluded_library_classes: int = 0

    @property
    def kinds(self) -> Tuple[ProbeKind, ...]:
        return tuple(k for k in ProbeKind if k in self.element_ids)

    def total(self, kind: ProbeKind) -> int:
        return len(self.element_ids.get(kind, ()))

    @property
    def totals(self) -> Dict[ProbeKind, int]:
        return {k: self.total(k) for k in self.kinds}

    def declared(self, kind: ProbeKind) -> int:
        """Instrumentable plus uninstrumentable elements of a kind."""
        return self.total(kind) + self.skipped.get(kind, 0)

    def to_dict(self) -> Dict:
        return {
            "version": SUMMARY_FORMAT_VERSION,
            "app": self.app,
            "identifier": self.identifier,
            "config": self.config.to_dict(),
            "excluded_library_classes": self.excluded_library_classes,
            "kinds": {
                k.name: {
                    "total": self.total(k),
                    "skipped": self.skipped.get(k, 0),
                    "element_ids": sorted(self.element_ids[k]),
                }
                for k in self.kinds
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AppSummary":
        try:
            kinds = {ProbeKind.from_name(name): entry for name, entry in data["kinds"].items()}
            return cls(
                app=data["app"],
                identifier=data["identifier"],
                element_ids={k: frozenset(e["element_ids"]) for k, e in kinds.items()},
                skipped={k: int(e.get("skipped", 0)) for k, e in kinds.items()},
                config=InstrumentationConfig.from_dict(data.get("config") or {"identifier": data["identifier"]}),
                excluded_library_classes=int(data.get("excluded_library_classes", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SmaliCovError(f"Malformed app summary: {e}") from e


def summarize_app(app: App, cfg: InstrumentationConfig) -> AppSummary:
    """Per-kind element ids and uninstrumentable counts for the original (non-instrumented) app."""
    cfg.validate()
    logchecker = find_logchecker(app)
    if logchecker is not None:
        raise AlreadyInstrumentedError(logchecker)

    kinds = component_kinds(app, cfg)
    element_ids: Dict[ProbeKind, Set[str]] = {k: set() for k in cfg.enabled_kinds}
    skipped: Dict[ProbeKind, int] = {k: 0 for k in cfg.enabled_kinds}
    libraries = 0
    for cls in app.classes:
        if cfg.is_library(cls.descriptor):
            libraries += 1
            continue
        plan = plan_class(cls, kinds.get(cls.descriptor), cfg)
        for kind, payloads in plan.payloads.items():
            element_ids[kind].update(payloads)
        for kind, count in plan.skipped.items():
            skipped[kind] += count

    summary = AppSummary(
        app=app.name,
        identifier=cfg.identifier,
        element_ids={k: frozenset(v) for k, v in element_ids.items()},
        skipped=skipped,
        config=cfg,
        excluded_library_classes=libraries,
    )
    log(f"Summary of '{app.name}': " + ", ".join(f"{k.name}={summary.total(k)}" for k in summary.kinds), "INFO")
    return summary


def save_summary(summary: AppSummary, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    log(f"App summary saved to '{path}'.", "DEBUG")
    return path


def load_summary(path: Path) -> AppSummary:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SmaliCovError(f"App summary '{path}' is not valid JSON: {e}") from e
    return AppSummary.from_dict(data)


# --- Log parsing ---

@dataclass(frozen=True)
class ProbeEvent:
    """One logged payload. `kind` is None when the payload after the identifier is malformed."""
    kind: Optional[ProbeKind]
    payload: str
    first_seen_line: int = field(default=0, compare=False)


@lru_cache(maxsize=16)
def _log_line_re(identifier: str) -> "re.Pattern[str]":
    # brief `I/TAG( 123): `, tag `I/TAG: `, threadtime `... I TAG  : ` and bare `TAG: `
    return re.compile(rf"(?:^|[\s/]){re.escape(identifier)}(?:\(\s*\d+\s*\))?\s*:\s+(?P<payload>.*?)\s*$")


def _classify(payload: str) -> Optional[ProbeKind]:
    try:
        key, body = split_payload(payload)
    except ValueError:
        return None
    kind = ProbeKind.from_key(key)
    if kind is None or not body:
        return None
    if kind is ProbeKind.STATEMENT:
        try:
            parse_statement_body(body)
        except ValueError:
            return None
    return kind


def parse_log_line(line: str, identifier: str, line_number: int = 0) -> Optional[ProbeEvent]:
    """The probe event carried by a log line, or None when the line does not carry the identifier."""
    match = _log_line_re(identifier).search(line)
    if not match:
        return None
    payload = match.group("payload")
    return ProbeEvent(_classify(payload), payload, line_number)


@dataclass
class LogScan:
    events: List[ProbeEvent] = field(default_factory=list)
    lines: int = 0

    @property
    def identifier_hits(self) -> int:
        return len(self.events)


def iter_log_lines(paths: Sequence[Path]) -> Iterator[str]:
    """Lines of every file in order, as one stream. Undecodable bytes are replaced."""
    for path in paths:
        with open(path, "r", encoding="utf-8", errors="replace") as f:
            for line in f:
                yield line.rstrip("\r\n")


def parse_log_lines(lines: Iterable[str], identifier: str) -> LogScan:
    scan = LogScan()
    for number, line in enumerate(lines, start=1):
        scan.lines = number
        event = parse_log_line(line, identifier, number)
        if event is not None:
            scan.events.append(event)
    return scan


def read_log_files(paths: Sequence[Path], identifier: str) -> LogScan:
    scan = parse_log_lines(iter_log_lines(paths), identifier)
    log(f"Read {scan.lines} log lines from {len(paths)} files; {scan.identifier_hits} carry '{identifier}'.", "INFO")
    return scan


def dedup_events(events: Iterable[ProbeEvent]) -> Set[ProbeEvent]:
    """Unique by payload, keeping the earliest first_seen_line."""
    earliest: Dict[str, ProbeEvent] = {}
    for event in events:
        seen = earliest.get(event.payload)
        if seen is None or event.first_seen_line < seen.first_seen_line:
            earliest[event.payload] = event
    return set(earliest.values())


def merge_events(left: Iterable[ProbeEvent], right: Iterable[ProbeEvent]) -> Set[ProbeEvent]:
    """Associative merge of two deduplicated shards."""
    return dedup_events([*left, *right])


# --- Coverage ---

def percentage(covered: int, total: int) -> Decimal:
    if total == 0:
        return Decimal("0.00")
    return (Decimal(covered) * 100 / Decimal(total)).quantize(_CENT, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class KindCoverage:
    covered: int
    total: int
    percentage: Decimal
    uncovered: Tuple[str, ...] = ()
    unknown: Tuple[str, ...] = ()

    def to_dict(self) -> Dict:
        return {
            "covered": self.covered,
            "total": self.total,
            "percentage": float(self.percentage),
            "uncovered": list(self.uncovered),
            "unknown": list(self.unknown),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "KindCoverage":
        return cls(
            covered=int(data["covered"]),
            total=int(data["total"]),
            percentage=Decimal(str(data["percentage"])).quantize(_CENT, rounding=ROUND_HALF_UP),
            uncovered=tuple(data.get("uncovered", ())),
            unknown=tuple(data.get("unknown", ())),
        )


@dataclass(frozen=True)
class CoverageReport:
    app: str
    identifier: str
    kinds: Mapping[ProbeKind, KindCoverage]
    skipped: Mapping[ProbeKind, int] = field(default_factory=dict)
    malformed: Tuple[str, ...] = ()

    def __getitem__(self, kind: ProbeKind) -> KindCoverage:
        return self.kinds[kind]

    def to_dict(self) -> Dict:
        return {
            "app": self.app,
            "identifier": self.identifier,
            "kinds": {k.name: v.to_dict() for k, v in self.kinds.items()},
            "skipped": {k.name: n for k, n in self.skipped.items()},
            "malformed": list(self.malformed),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CoverageReport":
        kinds = {ProbeKind.from_name(name): KindCoverage.from_dict(entry) for name, entry in data["kinds"].items()}
        return cls(
            app=data["app"],
            identifier=data["identifier"],
            kinds={k: kinds[k] for k in ProbeKind if k in kinds},
            skipped={ProbeKind.from_name(name): int(n) for name, n in (data.get("skipped") or {}).items()},
            malformed=tuple(data.get("malformed", ())),
        )


def compute_coverage(summary: AppSummary, events: Iterable[ProbeEvent]) -> CoverageReport:
    """
    covered(kind) = |logged payloads of kind ∩ element ids of kind|. Logged
    payloads the summary does not know are listed as unknown for their kind;
    payloads without a recognizable kind go to `malformed`.
    """
    logged: Dict[ProbeKind, Set[str]] = {}
    malformed: Set[str] = set()
    for event in events:
        if event.kind is None:
            malformed.add(event.payload)
        else:
            logged.setdefault(event.kind, set()).add(event.payload)

    kinds: Dict[ProbeKind, KindCoverage] = {}
    for kind in ProbeKind:
        if kind not in summary.element_ids and kind not in logged:
            continue
        ids = summary.element_ids.get(kind, frozenset())
        seen = logged.get(kind, set())
        covered = len(seen & ids)
        kinds[kind] = KindCoverage(
            covered=covered,
            total=len(ids),
            percentage=percentage(covered, len(ids)),
            uncovered=tuple(sorted(ids - seen)),
            unknown=tuple(sorted(seen - ids)),
        )
    return CoverageReport(
        app=summary.app,
        identifier=summary.identifier,
        kinds=kinds,
        skipped={k: summary.skipped.get(k, 0) for k in summary.kinds},
        malformed=tuple(sorted(malformed)),
    )


def render_report(report: CoverageReport, format: str = "text", show_uncovered: bool = False) -> bytes:
    if format == "machine":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")
    if format != "text":
        raise ValueError(f"Unknown report format: {format!r}")

    rows = [[kind.name, cov.covered, cov.total, f"{cov.percentage:.2f}"] for kind, cov in report.kinds.items()]
    table = tabulate(rows, headers=["Kind", "Covered", "Total", "Coverage %"], tablefmt="plain",
                     colalign=("left", "right", "right", "right"), disable_numparse=True)
    lines = [f"Coverage of {report.app} (log identifier {report.identifier})", "", table]

    skipped = {k: n for k, n in report.skipped.items() if n}
    if skipped:
        lines.append("")
        lines.append("Uninstrumentable (excluded from totals): "
                     + ", ".join(f"{k.name}={n}" for k, n in skipped.items()))
    unknown = sum(len(c.unknown) for c in report.kinds.values())
    if unknown:
        lines.append(f"Unknown logged elements: {unknown}")
    if report.malformed:
        lines.append(f"Malformed log payloads: {len(report.malformed)}")
    if show_uncovered:
        for kind, cov in report.kinds.items():
            if cov.uncovered:
                lines.append("")
                lines.append(f"Uncovered {kind.name} ({len(cov.uncovered)}):")
                lines.extend(f"  {element}" for element in cov.uncovered)
    return ("\n".join(lines) + "\n").encode("utf-8")


def report_from_machine(document: Union[bytes, str, Mapping]) -> CoverageReport:
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    if isinstance(document, str):
        document = json.loads(document)
    return CoverageReport.from_dict(document)
