# src/trace_simulator.py
"""
Replays a declared execution path against an instrumented app and emits
the log stream a device would produce, plus an independent reference
coverage computed from the path alone.
"""

import random
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from src.android_components import lifecycle_methods_of
from src.coverage_core import CoverageReport, KindCoverage, percentage, summarize_app
from src.errors import SmaliCovError, TraceError
from src.instrumenter import (
    InstrumentationConfig, component_kinds, find_logchecker, find_probes, is_before_placed, is_result_producer,
    make_probe, probe_eligibility, probe_positions,
)
from src.smali_ir import (
    App, BodyItemKind, ProbeKind, SmaliClass, SmaliMethod, canonical_method_id, class_payload, component_payload,
    method_payload, split_instruction, split_method_id, statement_payload,
)
from src.utils.log import log

SIMULATED_PID = 4242
_CASE_LABEL_RE = re.compile(r":\w+")


@dataclass(frozen=True)
class ExecutionPath:
    steps: Tuple[Tuple[str, int], ...] = ()

    @property
    def entered_methods(self) -> FrozenSet[str]:
        return frozenset(mid for mid, _ in self.steps)

    @property
    def entered_classes(self) -> FrozenSet[str]:
        """Classes one of whose constructors appears in the path."""
        return frozenset(split_method_id(mid)[0] for mid in self.entered_methods
                         if split_method_id(mid)[1].startswith(("<init>(", "<clinit>(")))

    def __len__(self) -> int:
        return len(self.steps)


def load_path(source: Union[str, Path]) -> ExecutionPath:
    """Reads `methodId<TAB>index` lines; blank lines and `#` comments are skipped."""
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) else source
    steps: List[Tuple[str, int]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        mid, sep, index = stripped.rpartition("\t")
        try:
            if not sep:
                raise ValueError("missing tab")
            split_method_id(mid)
            steps.append((mid, int(index)))
        except ValueError as e:
            raise TraceError(len(steps) + 1, f"line {number} is not 'methodId<TAB>index': {e}") from e
    return ExecutionPath(tuple(steps))


def format_path(path: ExecutionPath) -> str:
    return "".join(f"{mid}\t{index}\n" for mid, index in path.steps)


class LogCheckerRuntime:
    """Model of the injected log checker: atomic test-and-insert on the message set."""

    def __init__(self):
        self._lock = threading.Lock()
        self._logged: Set[str] = set()

    def should_log(self, message: str) -> bool:
        with self._lock:
            if message in self._logged:
                return False
            self._logged.add(message)
            return True

    @property
    def logged(self) -> FrozenSet[str]:
        with self._lock:
            return frozenset(self._logged)


@dataclass
class _MethodProbes:
    statement_count: int
    entry: List[str] = field(default_factory=list)
    by_statement: Dict[int, List[str]] = field(default_factory=dict)
    unreachable: List[str] = field(default_factory=list)


def _falls_through(opcode: str) -> bool:
    return not (opcode.startswith(("return", "goto")) or opcode == "throw")


def _probe_owner(position: int, first_label: Optional[int], last_probe: bool,
                 statements: List[Tuple[int, str]], k: int) -> Optional[int]:
    """
    Statement whose execution runs the probe at `position` (which lies
    between statements k-1 and k); -1 for method entry, None when no
    execution reaches it.
    """
    following = k if k < len(statements) else None
    if first_label is not None and position > first_label:
        return following
    if k == 0:
        return -1
    if first_label is None and last_probe and following is not None and is_before_placed(statements[k][1]):
        return following
    return k - 1 if _falls_through(statements[k - 1][1]) else None


def _method_probes(mid: str, method: SmaliMethod, logchecker: str) -> _MethodProbes:
    """
    Attributes every probe pair to the code that runs it, from its body
    position only. Payload contents are never consulted, so a misplaced
    probe logs where the device would log it, or not at all.
    """
    sites = {site.position: site.payload for site in find_probes(method, logchecker)}
    occupied = probe_positions(method, logchecker)
    body = method.body
    statements = [(position, item.opcode) for position, item in enumerate(body)
                  if item.is_instruction and position not in occupied]
    probes = _MethodProbes(len(statements))
    bounds = [-1] + [position for position, _ in statements] + [len(body)]
    for k in range(len(statements) + 1):
        gap = range(bounds[k] + 1, bounds[k + 1])
        first_label = next((p for p in gap if body[p].kind is BodyItemKind.LABEL), None)
        in_gap = [p for p in gap if p in sites]
        for p in in_gap:
            owner = _probe_owner(p, first_label, p == in_gap[-1], statements, k)
            if owner is None:
                probes.unreachable.append(sites[p])
            elif owner < 0:
                probes.entry.append(sites[p])
            else:
                probes.by_statement.setdefault(owner, []).append(sites[p])
    if probes.unreachable:
        log(f"{len(probes.unreachable)} probe(s) in {mid} can never run.", "DEBUG")
    return probes


def _step_target(table: Dict[str, Tuple[SmaliClass, SmaliMethod]], position: int, mid: str, index: int,
                 count_of) -> Tuple[SmaliClass, SmaliMethod]:
    if mid not in table:
        raise TraceError(position, f"unknown method {mid}")
    cls, method = table[mid]
    count = count_of(method)
    if not 0 <= index < count:
        raise TraceError(position, f"index {index} out of range for {mid} ({count} statements)")
    return cls, method


def simulate_trace(instrumented: App, path: ExecutionPath, identifier: str) -> str:
    """
    Log text for `path`: entering a method runs its leading probes, each
    step runs the probes its statement reaches on execution, and the log
    checker suppresses every payload it has already written. A method is
    always entered at its first statement.
    """
    logchecker = find_logchecker(instrumented)
    if logchecker is None:
        raise SmaliCovError(f"App '{instrumented.name}' is not instrumented (no log checker found)")
    table = instrumented.method_table()
    cache: Dict[str, _MethodProbes] = {}

    def _probes(mid: str, method: SmaliMethod) -> _MethodProbes:
        if mid not in cache:
            cache[mid] = _method_probes(mid, method, logchecker)
        return cache[mid]

    runtime = LogCheckerRuntime()
    lines: List[str] = []

    def _emit(payload: str):
        if runtime.should_log(payload):
            lines.append(f"I/{identifier}({SIMULATED_PID:5d}): {payload}")

    previous: Optional[str] = None
    for position, (mid, index) in enumerate(path.steps, start=1):
        _, method = _step_target(table, position, mid, index,
                                 lambda m, mid=mid: _probes(mid, m).statement_count)
        probes = _probes(mid, method)
        if mid != previous:
            for payload in probes.entry:
                _emit(payload)
        for payload in probes.by_statement.get(index, ()):
            _emit(payload)
        previous = mid
    log(f"Simulated {len(path)} steps: {len(lines)} log lines.", "DEBUG")
    return "".join(line + "\n" for line in lines)


def oracle_coverage(app: App, cfg: InstrumentationConfig, path: ExecutionPath) -> CoverageReport:
    """Coverage derived from the path and the summary denominators, without instrumenting or logging."""
    summary = summarize_app(app, cfg)
    table = app.method_table()
    kinds = component_kinds(app, cfg)
    derived: Dict[ProbeKind, Set[str]] = {k: set() for k in summary.kinds}

    def _add(kind: ProbeKind, raw_payload: str):
        if kind in derived:
            derived[kind].add(make_probe(kind, raw_payload, cfg).payload)

    for position, (mid, index) in enumerate(path.steps, start=1):
        cls, method = _step_target(table, position, mid, index, lambda m: len(m.original_instructions))
        eligible = probe_eligibility(method) is None
        _add(ProbeKind.METHOD, method_payload(mid))
        instruction = method.original_instructions[index]
        _add(ProbeKind.STATEMENT, statement_payload(mid, instruction.text, index))
        if method.is_constructor and eligible:
            _add(ProbeKind.CLASS, class_payload(cls.descriptor))
        kind = kinds.get(cls.descriptor)
        if kind is not None and eligible and any(m.signature == method.signature
                                                 for m in lifecycle_methods_of(cls, kind)):
            _add(kind.probe_kind, component_payload(kind.probe_kind, cls.descriptor))

    report_kinds: Dict[ProbeKind, KindCoverage] = {}
    for kind in summary.kinds:
        ids = summary.element_ids[kind]
        covered = derived[kind] & ids
        report_kinds[kind] = KindCoverage(
            covered=len(covered),
            total=len(ids),
            percentage=percentage(len(covered), len(ids)),
            uncovered=tuple(sorted(ids - covered)),
        )
    return CoverageReport(
        app=summary.app,
        identifier=summary.identifier,
        kinds=report_kinds,
        skipped={k: summary.skipped.get(k, 0) for k in summary.kinds},
    )


def _body_methods(app: App) -> Iterable[Tuple[SmaliClass, SmaliMethod]]:
    logchecker = find_logchecker(app)
    for cls, method in app.iter_methods():
        if cls.descriptor != logchecker and method.original_instructions:
            yield cls, method


def exhaustive_path(app: App) -> ExecutionPath:
    """Every original statement of every method, in class and body order."""
    steps = [(canonical_method_id(cls, m), item.index)
             for cls, m in _body_methods(app) for item in m.original_instructions]
    return ExecutionPath(tuple(steps))


def _label_targets(method: SmaliMethod) -> Dict[str, int]:
    """Label -> index of the first original statement at or after it."""
    targets: Dict[str, int] = {}
    pending: List[str] = []
    for item in method.body:
        if item.kind is BodyItemKind.LABEL:
            pending.append(item.text)
        elif item.is_instruction and item.index is not None:
            targets.update((label, item.index) for label in pending)
            pending = []
    return targets


def _switch_cases(method: SmaliMethod, data_label: str) -> List[str]:
    """Case labels listed in the switch payload block that follows `data_label`."""
    for position, item in enumerate(method.body):
        if item.kind is BodyItemKind.LABEL and item.text == data_label:
            block = next((b for b in method.body[position + 1:] if b.kind is BodyItemKind.DIRECTIVE), None)
            return _CASE_LABEL_RE.findall(block.text) if block else []
    return []


def _walk_method(method: SmaliMethod, rng: random.Random) -> List[int]:
    """
    One visit following the method's control flow from its first statement.
    Branches and switches pick a successor at random. The visit ends at a
    return or throw, or once a random step budget runs out.
    """
    instructions = method.original_instructions
    targets = _label_targets(method)
    budget = rng.randint(1, 2 * len(instructions))
    visit: List[int] = []
    index: Optional[int] = 0
    while index is not None and index < len(instructions):
        visit.append(index)
        opcode, operands = split_instruction(instructions[index].text)
        if not _falls_through(opcode) and not opcode.startswith("goto"):
            break
        # An invoke and its move-result run together.
        awaits_result = (is_result_producer(opcode) and index + 1 < len(instructions)
                         and instructions[index + 1].opcode.startswith("move-result"))
        if len(visit) >= budget and not awaits_result:
            break
        if opcode.startswith("goto"):
            index = targets.get(operands[0]) if operands else None
        elif opcode.startswith("if-") and operands and rng.random() < 0.5:
            index = targets.get(operands[-1])
        elif opcode in ("packed-switch", "sparse-switch") and operands:
            case = rng.choice([None] + _switch_cases(method, operands[-1]))
            index = index + 1 if case is None else targets.get(case)
        else:
            index += 1
    return visit


def random_path(app: App, rng: random.Random, max_calls: int = 12) -> ExecutionPath:
    """
    Random sequence of method visits, each a walk over the method's control
    flow. Loops and repeated visits exercise re-entry and repeated statements.
    """
    methods = [(canonical_method_id(cls, m), m) for cls, m in _body_methods(app)]
    if not methods:
        return ExecutionPath()
    steps: List[Tuple[str, int]] = []
    for _ in range(rng.randint(0, max_calls)):
        mid, method = rng.choice(methods)
        steps.extend((mid, index) for index in _walk_method(method, rng))
    return ExecutionPath(tuple(steps))
