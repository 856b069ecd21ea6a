# src/instrumenter.py
"""
Probe injection over the smali IR.

Each probe is a pair of instructions

    const-string vP, "<KIND>=<body>"
    invoke-static/range {vP .. vP}, Lcom/androlog/LogChecker;->log(Ljava/lang/String;)V

where vP is one extra local register reserved per method. The injected
log-checker class forwards to `log(message, tag)` with the configured
identifier and only writes a log record the first time it sees a message.
"""

import re
import time
import traceback
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from string import Template
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from src.android_components import (
    DEFAULT_COMPONENT_BASES, ComponentKind, detect_components, lifecycle_methods_of, parse_component_bases,
)
from src.errors import AlreadyInstrumentedError, ConfigError, InstrumentationError
from src.smali_ir import (
    App, BodyItem, BodyItemKind, Probe, ProbeKind, RegistersSpec, SmaliClass, SmaliMethod,
    canonical_method_id, class_payload, component_payload, escape_identifier, identifier_escape_pivot,
    method_payload, parse_register_list, parse_smali_string_literal, register_index, register_operand_count,
    smali_string_literal, split_instruction, split_payload, statement_payload, join_instruction,
    wide_register_pairs,
)
from src.smali_parser import descriptor_to_path, parse_class, smali_root_of
from src.utils.log import log

DEFAULT_IDENTIFIER = "ANDROLOG"
DEFAULT_LOGCHECKER_DESCRIPTOR = "Lcom/androlog/LogChecker;"
LOGCHECKER_MARKER_FIELD = "SMALICOV_MARKER"
LOGCHECKER_MARKER_VALUE = "smalicov-logchecker"
LOG_METHOD_SIGNATURE = "log(Ljava/lang/String;)V"
MAX_PROBE_REGISTER = 255  # const-string vAA

_IDENTIFIER_FORBIDDEN = re.compile(r"[\s:]")


class Granularity(str, Enum):
    CLASSES = "classes"
    METHODS = "methods"
    STATEMENTS = "statements"
    COMPONENTS = "components"

    @property
    def kinds(self) -> Tuple[ProbeKind, ...]:
        return _GRANULARITY_KINDS[self]


_GRANULARITY_KINDS = {
    Granularity.CLASSES: (ProbeKind.CLASS,),
    Granularity.METHODS: (ProbeKind.METHOD,),
    Granularity.STATEMENTS: (ProbeKind.STATEMENT,),
    Granularity.COMPONENTS: (ProbeKind.ACTIVITY, ProbeKind.SERVICE, ProbeKind.RECEIVER, ProbeKind.PROVIDER),
}


@dataclass(frozen=True)
class InstrumentationConfig:
    identifier: str = DEFAULT_IDENTIFIER
    granularities: FrozenSet[Granularity] = frozenset(Granularity)
    library_prefixes: Tuple[str, ...] = ()
    exclude_libraries: bool = False
    component_bases: Mapping[str, ComponentKind] = field(default_factory=lambda: dict(DEFAULT_COMPONENT_BASES))
    workers: int = 4

    def validate(self) -> "InstrumentationConfig":
        if not self.identifier or _IDENTIFIER_FORBIDDEN.search(self.identifier):
            raise ConfigError(f"Invalid log identifier {self.identifier!r}: must be non-empty "
                              "without whitespace, ':' or newline")
        if identifier_escape_pivot(self.identifier) is None:
            raise ConfigError(f"Invalid log identifier {self.identifier!r}: needs a character other than "
                              "lowercase hex digits, 'u', 'n' or backslash")
        if not self.granularities:
            raise ConfigError("At least one granularity must be selected")
        return self

    @property
    def enabled_kinds(self) -> Tuple[ProbeKind, ...]:
        return tuple(k for k in ProbeKind if any(k in g.kinds for g in self.granularities))

    def is_library(self, descriptor: str) -> bool:
        return self.exclude_libraries and descriptor.startswith(tuple(self.library_prefixes))

    def to_dict(self) -> Dict:
        return {
            "identifier": self.identifier,
            "granularities": sorted(g.value for g in self.granularities),
            "library_prefixes": list(self.library_prefixes),
            "exclude_libraries": self.exclude_libraries,
            "component_bases": {d: k.value for d, k in sorted(self.component_bases.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "InstrumentationConfig":
        return cls(
            identifier=data.get("identifier", DEFAULT_IDENTIFIER),
            granularities=frozenset(Granularity(g) for g in data.get("granularities", [g.value for g in Granularity])),
            library_prefixes=tuple(data.get("library_prefixes", ())),
            exclude_libraries=bool(data.get("exclude_libraries", False)),
            component_bases=parse_component_bases(data.get("component_bases")),
        )


@dataclass(frozen=True)
class SkipRecord:
    element: str
    reason: str
    kind: Optional[ProbeKind] = None

    def to_dict(self) -> Dict:
        return {"element": self.element, "reason": self.reason, "kind": self.kind.name if self.kind else None}


@dataclass
class ClassReport:
    """Per-class accumulator; each worker owns one, merged afterwards."""
    descriptor: str
    probes: Counter = field(default_factory=Counter)
    skipped: List[SkipRecord] = field(default_factory=list)
    elapsed_ms: float = 0.0
    placed: List[Probe] = field(default_factory=list)

    def skip(self, element: str, reason: str, kind: Optional[ProbeKind] = None):
        record = SkipRecord(element, reason, kind)
        if record not in self.skipped:
            self.skipped.append(record)


@dataclass
class InstrumentationReport:
    probes_inserted: Dict[ProbeKind, int]
    classes_skipped: List[SkipRecord]
    logchecker_descriptor: str
    elapsed_seconds: float = 0.0
    class_timings_ms: Dict[str, float] = field(default_factory=dict)
    placed: List[Probe] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "logchecker_descriptor": self.logchecker_descriptor,
            "probes_inserted": {k.name: self.probes_inserted.get(k, 0) for k in ProbeKind},
            "classes_skipped": [s.to_dict() for s in self.classes_skipped],
            "elapsed_seconds": round(self.elapsed_seconds, 3),
            "max_class_ms": round(max(self.class_timings_ms.values(), default=0.0), 3),
            "class_timings_ms": {d: round(ms, 3) for d, ms in sorted(self.class_timings_ms.items())},
        }


# --- Log checker ---

_LOGCHECKER_TEMPLATE = Template("""\
.class public final ${descriptor}
.super Ljava/lang/Object;
.source "LogChecker.java"

.field public static final ${marker_field}:Ljava/lang/String; = ${marker}
.field public static final TAG:Ljava/lang/String; = ${tag}
.field private static final LOGGED:Ljava/util/Set;

.method static constructor <clinit>()V
    .locals 1
    new-instance v0, Ljava/util/concurrent/ConcurrentHashMap;
    invoke-direct {v0}, Ljava/util/concurrent/ConcurrentHashMap;-><init>()V
    invoke-static {v0}, Ljava/util/Collections;->newSetFromMap(Ljava/util/Map;)Ljava/util/Set;
    move-result-object v0
    sput-object v0, ${descriptor}->LOGGED:Ljava/util/Set;
    return-void
.end method

.method private constructor <init>()V
    .locals 0
    invoke-direct {p0}, Ljava/lang/Object;-><init>()V
    return-void
.end method

.method public static log(Ljava/lang/String;)V
    .locals 1
    const-string v0, ${tag}
    invoke-static {p0, v0}, ${descriptor}->log(Ljava/lang/String;Ljava/lang/String;)V
    return-void
.end method

.method public static log(Ljava/lang/String;Ljava/lang/String;)V
    .locals 1
    sget-object v0, ${descriptor}->LOGGED:Ljava/util/Set;
    invoke-interface {v0, p0}, Ljava/util/Set;->add(Ljava/lang/Object;)Z
    move-result v0
    if-eqz v0, :cond_0
    invoke-static {p1, p0}, Landroid/util/Log;->i(Ljava/lang/String;Ljava/lang/String;)I
    :cond_0
    return-void
.end method
""")


def synthesize_logchecker(identifier: str, descriptor: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> SmaliClass:
    """
    Builds the dedup log-checker class. The set is backed by a
    ConcurrentHashMap, so `Set.add` is the atomic test-and-insert and only
    its first success for a message reaches `android.util.Log`.
    """
    InstrumentationConfig(identifier=identifier).validate()
    source = _LOGCHECKER_TEMPLATE.substitute(
        descriptor=descriptor,
        tag=smali_string_literal(identifier),
        marker_field=LOGCHECKER_MARKER_FIELD,
        marker=smali_string_literal(LOGCHECKER_MARKER_VALUE),
    )
    return parse_class(source)


def is_logchecker(cls: SmaliClass) -> bool:
    marker = f" {LOGCHECKER_MARKER_FIELD}:"
    return any(marker in block.split("\n", 1)[0] for block in cls.fields_raw)


def find_logchecker(app: App) -> Optional[str]:
    for cls in app.classes:
        if is_logchecker(cls):
            return cls.descriptor
    return None


def choose_logchecker_descriptor(app: App, base: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> str:
    """The default descriptor, or the first free numeric-suffixed variant when an app class already uses it."""
    table = app.class_table
    if base not in table:
        return base
    stem = base[:-1]
    n = 1
    while f"{stem}{n};" in table:
        n += 1
    chosen = f"{stem}{n};"
    log(f"App already defines {base}; log checker renamed to {chosen}.", "WARNING")
    return chosen


# --- Register widths ---

_NIBBLE_OPCODES = {
    "move", "move-wide", "move-object", "array-length", "instance-of", "new-array",
    "filled-new-array", "const/4", "rsub-int",
    "neg-int", "not-int", "neg-long", "not-long", "neg-float", "neg-double",
    "int-to-long", "int-to-float", "int-to-double", "long-to-int", "long-to-float", "long-to-double",
    "float-to-int", "float-to-long", "float-to-double", "double-to-int", "double-to-long",
    "double-to-float", "int-to-byte", "int-to-char", "int-to-short",
    "if-eq", "if-ne", "if-lt", "if-ge", "if-gt", "if-le",
}


def register_limit(opcode: str, position: int) -> int:
    """Highest register index an operand slot of `opcode` can encode."""
    if opcode.endswith("/range") or opcode in ("move/16", "move-wide/16", "move-object/16"):
        return 65535
    if opcode.endswith("/from16"):
        return 255 if position == 0 else 65535
    if (opcode in _NIBBLE_OPCODES or opcode.endswith(("/2addr", "/lit16"))
            or opcode.startswith(("iget", "iput", "invoke-"))):
        return 15
    return 255


def _shifted(index: int, locals_count: int) -> int:
    return index + 1 if index >= locals_count else index


def probe_eligibility(method: SmaliMethod) -> Optional[str]:
    """Reason the method cannot take probes, or None when it can."""
    if method.is_abstract_or_native:
        return "abstract or native method"
    if not method.has_body:
        return "method has no instructions"
    locals_count = method.locals_count
    if locals_count is None:
        return "method has no register directive"
    if locals_count > MAX_PROBE_REGISTER:
        return (f"probe register v{locals_count} exceeds const-string operand width "
                f"(max v{MAX_PROBE_REGISTER})")
    for item in method.original_instructions:
        opcode, operands = split_instruction(item.text)
        for position, operand in enumerate(operands[:register_operand_count(operands)]):
            regs, is_range = parse_register_list(operand)
            indices = [register_index(r, locals_count) for r in regs]
            if is_range and indices[0] < locals_count <= indices[1]:
                return f"register range in '{item.text}' straddles locals and parameters"
            for index in indices:
                if _shifted(index, locals_count) > register_limit(opcode, position):
                    return f"'{item.text}' cannot encode v{_shifted(index, locals_count)} after the parameter shift"
        # A pair starting at the last local would be split by the probe register.
        if locals_count - 1 in wide_register_pairs(item.text, locals_count):
            return f"wide register pair in '{item.text}' straddles locals and parameters"
    return None


_REGISTER_IN_OPERAND_RE = re.compile(r"\bv(\d+)\b")
_REGISTER_DIRECTIVE_RE = re.compile(r"^(?P<head>\.local|\.end local|\.restart local) v(?P<num>\d+)(?P<rest>.*)$")


def _remap_raw_registers(text: str, locals_count: int) -> str:
    def _bump(match: "re.Match[str]") -> str:
        return f"v{_shifted(int(match.group(1)), locals_count)}"

    opcode, operands = split_instruction(text)
    count = register_operand_count(operands)
    remapped = [_REGISTER_IN_OPERAND_RE.sub(_bump, op) for op in operands[:count]] + operands[count:]
    return join_instruction(opcode, remapped)


def allocate_probe_registers(method: SmaliMethod) -> SmaliMethod:
    """
    Reserves v<old locals> for probe constants: locals grow by one and raw
    v-references to parameter registers move up by one (p-aliases follow
    automatically). Ineligible methods come back unchanged with
    `ineligible_reason` set. Idempotent.
    """
    if method.probe_register is not None or method.ineligible_reason is not None:
        return method
    reason = probe_eligibility(method)
    if reason is not None:
        return replace(method, ineligible_reason=reason)
    locals_count = method.locals_count
    body: List[BodyItem] = []
    for item in method.body:
        if item.is_instruction:
            remapped = _remap_raw_registers(item.text, locals_count)
            if remapped != item.text:
                item = replace(item, text=remapped, original_text=item.original_text or item.text)
        elif item.kind is BodyItemKind.DIRECTIVE:
            match = _REGISTER_DIRECTIVE_RE.match(item.text)
            if match:
                num = _shifted(int(match.group("num")), locals_count)
                item = replace(item, text=f"{match.group('head')} v{num}{match.group('rest')}")
        body.append(item)
    registers = RegistersSpec(method.registers.directive, method.registers.count + 1)
    return replace(method, registers=registers, body=tuple(body), probe_register=locals_count)


# --- Probe insertion ---

def probe_items(payload: str, register: int, logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> Tuple[BodyItem, BodyItem]:
    return (
        BodyItem(BodyItemKind.INSTRUCTION, f"const-string v{register}, {smali_string_literal(payload)}"),
        BodyItem(BodyItemKind.INSTRUCTION,
                 f"invoke-static/range {{v{register} .. v{register}}}, {logchecker}->{LOG_METHOD_SIGNATURE}"),
    )


def insert_probe(method: SmaliMethod, position: int, probe: Probe,
                 logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> SmaliMethod:
    if method.probe_register is None:
        raise InstrumentationError(f"insert_probe on '{method.signature}' before register allocation")
    if not 0 <= position <= len(method.body):
        raise InstrumentationError(f"Probe position {position} out of range for '{method.signature}' "
                                   f"(body has {len(method.body)} items)")
    items = probe_items(probe.payload, method.probe_register, logchecker)
    return replace(method, body=method.body[:position] + items + method.body[position:])


def entry_position(method: SmaliMethod) -> int:
    """Index of the first label or instruction: everything before it is declarative."""
    for position, item in enumerate(method.body):
        if item.kind in (BodyItemKind.INSTRUCTION, BodyItemKind.LABEL):
            return position
    return len(method.body)


def is_before_placed(opcode: str) -> bool:
    """Terminators and branches: a probe after them would miss (some of) their executions."""
    return (opcode.startswith(("return", "goto", "if-")) or opcode == "throw"
            or opcode in ("packed-switch", "sparse-switch"))


def is_result_producer(opcode: str) -> bool:
    return opcode.startswith(("invoke-", "filled-new-array"))


def _next_instruction(body: Tuple[BodyItem, ...], start: int) -> Optional[BodyItem]:
    # Labels and .catch directives emit no code: an invoke and its move-result may straddle a try boundary.
    for item in body[start:]:
        if item.is_instruction:
            return item
    return None


def make_probe(kind: ProbeKind, payload: str, cfg: InstrumentationConfig) -> Probe:
    """Probe for a raw `<KEY>=<body>` payload, with the log identifier broken up inside the body."""
    key, body = split_payload(payload)
    return Probe(kind, f"{key}={escape_identifier(body, cfg.identifier)}")


def _with_entry_probe(method: SmaliMethod, probe: Probe, logchecker: str) -> SmaliMethod:
    return insert_probe(method, entry_position(method), probe, logchecker)


def instrument_class_probes(cls: SmaliClass, cfg: InstrumentationConfig, report: Optional[ClassReport] = None,
                            logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> SmaliClass:
    """CLASS=<descriptor> as the first executed statement of every <init>/<clinit> with a body."""
    report = report or ClassReport(cls.descriptor)
    probe = make_probe(ProbeKind.CLASS, class_payload(cls.descriptor), cfg)
    methods: List[SmaliMethod] = []
    sites = 0
    for method in cls.methods:
        if method.is_constructor and method.has_body:
            method = allocate_probe_registers(method)
            if method.ineligible_reason is None:
                method = _with_entry_probe(method, probe, logchecker)
                sites += 1
            else:
                report.skip(canonical_method_id(cls, method), method.ineligible_reason)
        methods.append(method)
    if sites:
        report.probes[ProbeKind.CLASS] += sites
    else:
        report.skip(cls.descriptor, "no instrumentable constructor", ProbeKind.CLASS)
    return replace(cls, methods=tuple(methods))


def instrument_method_probes(cls: SmaliClass, cfg: InstrumentationConfig, report: Optional[ClassReport] = None,
                             logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> SmaliClass:
    """METHOD=<method id> at the start of every method with a body."""
    report = report or ClassReport(cls.descriptor)
    methods: List[SmaliMethod] = []
    for method in cls.methods:
        mid = canonical_method_id(cls, method)
        method = allocate_probe_registers(method)
        if method.ineligible_reason is not None:
            report.skip(mid, method.ineligible_reason, ProbeKind.METHOD)
        else:
            method = _with_entry_probe(method, make_probe(ProbeKind.METHOD, method_payload(mid), cfg), logchecker)
            report.probes[ProbeKind.METHOD] += 1
        methods.append(method)
    return replace(cls, methods=tuple(methods))


def _statement_probed_body(method: SmaliMethod, mid: str, cfg: InstrumentationConfig,
                           logchecker: str) -> Tuple[Tuple[BodyItem, ...], int]:
    out: List[BodyItem] = []
    deferred: List[BodyItem] = []
    count = 0
    for position, item in enumerate(method.body):
        if not (item.is_instruction and item.index is not None):
            out.append(item)
            continue
        payload = statement_payload(mid, item.original_text or item.text, item.index)
        items = probe_items(make_probe(ProbeKind.STATEMENT, payload, cfg).payload, method.probe_register, logchecker)
        count += 1
        opcode = item.opcode
        if is_before_placed(opcode):
            out.extend(items)
            out.append(item)
            continue
        nxt = _next_instruction(method.body, position + 1)
        if is_result_producer(opcode) and nxt is not None and nxt.opcode.startswith("move-result"):
            # Nothing may sit between an invoke and its move-result.
            out.append(item)
            deferred.extend(items)
            continue
        out.append(item)
        out.extend(deferred)
        deferred = []
        out.extend(items)
    out.extend(deferred)
    return tuple(out), count


def instrument_statement_probes(cls: SmaliClass, cfg: InstrumentationConfig, report: Optional[ClassReport] = None,
                                logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> SmaliClass:
    """
    One STATEMENT probe per original instruction: before terminators and
    branches, after the move-result of an invoke, otherwise right after it.
    """
    report = report or ClassReport(cls.descriptor)
    methods: List[SmaliMethod] = []
    for method in cls.methods:
        if method.has_body:
            mid = canonical_method_id(cls, method)
            method = allocate_probe_registers(method)
            if method.ineligible_reason is None:
                body, count = _statement_probed_body(method, mid, cfg, logchecker)
                method = replace(method, body=body)
                report.probes[ProbeKind.STATEMENT] += count
            else:
                report.skip(mid, method.ineligible_reason, ProbeKind.STATEMENT)
        methods.append(method)
    return replace(cls, methods=tuple(methods))


def instrument_component_probes(cls: SmaliClass, kind: ComponentKind, cfg: InstrumentationConfig,
                                report: Optional[ClassReport] = None,
                                logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> SmaliClass:
    """<KINDKEY>=<descriptor> at the start of every present lifecycle method; one payload per component."""
    report = report or ClassReport(cls.descriptor)
    probe_kind = kind.probe_kind
    probe = make_probe(probe_kind, component_payload(probe_kind, cls.descriptor), cfg)
    lifecycle = {m.signature for m in lifecycle_methods_of(cls, kind)}
    methods: List[SmaliMethod] = []
    sites = 0
    for method in cls.methods:
        if method.signature in lifecycle and method.has_body:
            method = allocate_probe_registers(method)
            if method.ineligible_reason is None:
                method = _with_entry_probe(method, probe, logchecker)
                sites += 1
        methods.append(method)
    if sites:
        report.probes[probe_kind] += sites
    else:
        report.skip(cls.descriptor, f"{kind.value} without instrumentable lifecycle method", probe_kind)
    return replace(cls, methods=tuple(methods))


def instrument_class(cls: SmaliClass, kind: Optional[ComponentKind], cfg: InstrumentationConfig,
                     logchecker: str = DEFAULT_LOGCHECKER_DESCRIPTOR) -> Tuple[SmaliClass, ClassReport]:
    """Runs the enabled phases in order: classes, methods, statements, components."""
    report = ClassReport(cls.descriptor)
    started = time.perf_counter()
    granularities = cfg.granularities
    if Granularity.CLASSES in granularities:
        cls = instrument_class_probes(cls, cfg, report, logchecker)
    if Granularity.METHODS in granularities:
        cls = instrument_method_probes(cls, cfg, report, logchecker)
    if Granularity.STATEMENTS in granularities:
        cls = instrument_statement_probes(cls, cfg, report, logchecker)
    if Granularity.COMPONENTS in granularities and kind is not None:
        cls = instrument_component_probes(cls, kind, cfg, report, logchecker)
    report.placed = anchored_probes(cls, logchecker)
    report.elapsed_ms = (time.perf_counter() - started) * 1000.0
    return cls, report


# --- Planning (what instrumentation would produce, without producing it) ---

@dataclass
class ClassPlan:
    payloads: Dict[ProbeKind, Set[str]] = field(default_factory=dict)
    skipped: Counter = field(default_factory=Counter)


def plan_class(cls: SmaliClass, kind: Optional[ComponentKind], cfg: InstrumentationConfig) -> ClassPlan:
    """Payloads and uninstrumentable counts for one class under `cfg`, mirroring instrument_class."""
    plan = ClassPlan(payloads={k: set() for k in cfg.enabled_kinds})
    enabled = set(cfg.enabled_kinds)
    eligible = {m.signature: probe_eligibility(m) is None for m in cls.methods}

    if ProbeKind.CLASS in enabled:
        if any(m.is_constructor and m.has_body and eligible[m.signature] for m in cls.methods):
            plan.payloads[ProbeKind.CLASS].add(make_probe(ProbeKind.CLASS, class_payload(cls.descriptor), cfg).payload)
        else:
            plan.skipped[ProbeKind.CLASS] += 1
    for method in cls.methods:
        mid = canonical_method_id(cls, method)
        if ProbeKind.METHOD in enabled:
            if eligible[method.signature]:
                plan.payloads[ProbeKind.METHOD].add(make_probe(ProbeKind.METHOD, method_payload(mid), cfg).payload)
            else:
                plan.skipped[ProbeKind.METHOD] += 1
        if ProbeKind.STATEMENT in enabled:
            for item in method.original_instructions:
                if eligible[method.signature]:
                    payload = statement_payload(mid, item.text, item.index)
                    plan.payloads[ProbeKind.STATEMENT].add(make_probe(ProbeKind.STATEMENT, payload, cfg).payload)
                else:
                    plan.skipped[ProbeKind.STATEMENT] += 1
    if kind is not None and kind.probe_kind in enabled:
        probe_kind = kind.probe_kind
        if any(m.has_body and eligible[m.signature] for m in lifecycle_methods_of(cls, kind)):
            plan.payloads[probe_kind].add(
                make_probe(probe_kind, component_payload(probe_kind, cls.descriptor), cfg).payload)
        else:
            plan.skipped[probe_kind] += 1
    return plan


def component_kinds(app: App, cfg: InstrumentationConfig) -> Dict[str, ComponentKind]:
    """Component kind per non-library app class."""
    candidates = [cls for cls in app.classes if not (cfg.is_library(cls.descriptor) or is_logchecker(cls))]
    return detect_components(candidates, app.class_table, cfg.component_bases)


# --- Probe recognition ---

@dataclass(frozen=True)
class ProbeSite:
    position: int
    register: int
    payload: str

    @property
    def kind(self) -> Optional[ProbeKind]:
        return ProbeKind.from_key(self.payload.partition("=")[0])


_CONST_STRING_RE = re.compile(r'^const-string v(?P<reg>\d+), (?P<literal>".*")$')


def find_probes(method: SmaliMethod, logchecker: str) -> List[ProbeSite]:
    """Probe pairs in a method body, recognized structurally (works on re-parsed output too)."""
    call = f"}}, {logchecker}->{LOG_METHOD_SIGNATURE}"
    sites: List[ProbeSite] = []
    body = method.body
    for position in range(len(body) - 1):
        first, second = body[position], body[position + 1]
        if not (first.is_instruction and second.is_instruction):
            continue
        match = _CONST_STRING_RE.match(first.text)
        if not match:
            continue
        reg = match.group("reg")
        if second.text == f"invoke-static/range {{v{reg} .. v{reg}{call}":
            sites.append(ProbeSite(position, int(reg), parse_smali_string_literal(match.group("literal"))))
    return sites


def anchored_probes(cls: SmaliClass, logchecker: str) -> List[Probe]:
    """Probes of a class anchored at (class descriptor, method id, final body position)."""
    placed: List[Probe] = []
    for method in cls.methods:
        mid = canonical_method_id(cls, method)
        for site in find_probes(method, logchecker):
            if site.kind is not None:
                placed.append(Probe(site.kind, site.payload, (cls.descriptor, mid, site.position)))
    return placed


def probe_positions(method: SmaliMethod, logchecker: str) -> Set[int]:
    """Body positions occupied by probe instructions (both halves of each pair)."""
    positions: Set[int] = set()
    for site in find_probes(method, logchecker):
        positions.update((site.position, site.position + 1))
    return positions


def injected_payloads(app: App, logchecker: str) -> Dict[ProbeKind, Set[str]]:
    found: Dict[ProbeKind, Set[str]] = {}
    for cls, method in app.iter_methods():
        if cls.descriptor == logchecker:
            continue
        for site in find_probes(method, logchecker):
            found.setdefault(site.kind, set()).add(site.payload)
    return found


# --- App driver ---

def _merge_reports(reports: Iterable[ClassReport], logchecker: str, elapsed: float) -> InstrumentationReport:
    probes: Counter = Counter()
    skipped: List[SkipRecord] = []
    timings: Dict[str, float] = {}
    placed: List[Probe] = []
    for report in sorted(reports, key=lambda r: r.descriptor):
        probes.update(report.probes)
        skipped.extend(report.skipped)
        timings[report.descriptor] = report.elapsed_ms
        placed.extend(report.placed)
    return InstrumentationReport(
        probes_inserted={k: probes.get(k, 0) for k in ProbeKind},
        classes_skipped=skipped,
        logchecker_descriptor=logchecker,
        elapsed_seconds=elapsed,
        class_timings_ms=timings,
        placed=placed,
    )


def instrument_app(app: App, cfg: InstrumentationConfig) -> Tuple[App, InstrumentationReport]:
    """
    Instruments every non-library class, injects the log checker and checks
    the result against the Dalvik rules the probes could break.
    """
    from src.verifier import verify_app

    cfg.validate()
    previous = find_logchecker(app)
    if previous is not None:
        raise AlreadyInstrumentedError(previous)

    started = time.perf_counter()
    logchecker = choose_logchecker_descriptor(app)
    kinds = component_kinds(app, cfg)
    log(f"Instrumenting {len(app.classes)} classes of '{app.name}' "
        f"(granularities: {', '.join(sorted(g.value for g in cfg.granularities))}; "
        f"{len(kinds)} components)...", "INFO")

    def _work(cls: SmaliClass) -> Tuple[SmaliClass, ClassReport]:
        if cfg.is_library(cls.descriptor):
            report = ClassReport(cls.descriptor)
            report.skip(cls.descriptor, "library class excluded")
            return cls, report
        try:
            return instrument_class(cls, kinds.get(cls.descriptor), cfg, logchecker)
        except Exception as e:
            log(f"Instrumentation of {cls.descriptor} failed: {e}", "ERROR")
            log(traceback.format_exc(), "DEBUG")
            raise

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(_work, app.classes))

    checker = synthesize_logchecker(cfg.identifier, logchecker)
    classes = sorted([cls for cls, _ in results] + [checker], key=lambda c: c.descriptor)
    sources = dict(app.sources)
    sources[logchecker] = smali_root_of(app) / descriptor_to_path(logchecker)
    instrumented = App(name=app.name, classes=tuple(classes), sources={d: sources[d] for d in sorted(sources)})

    violations = verify_app(instrumented, logchecker)
    if violations:
        for violation in violations:
            log(violation, "ERROR")
        raise InstrumentationError(f"{len(violations)} Dalvik rule violations after instrumentation; "
                                   f"first: {violations[0]}")

    report = _merge_reports((r for _, r in results), logchecker, time.perf_counter() - started)
    total = sum(report.probes_inserted.values())
    log(f"Inserted {total} probes into '{app.name}' in {report.elapsed_seconds:.2f}s "
        f"({len(report.classes_skipped)} skipped elements).", "SUCCESS")
    return instrumented, report
