# src/smali_ir.py
"""
In-memory model of one disassembled smali class, plus the small text
helpers every other module shares (operand splitting, register tokens,
probe payload formats).

All values are frozen dataclasses holding tuples: safe to share read-only
between worker threads. Instrumentation builds new values with
`dataclasses.replace`.
"""

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

# --- Grammar constants ---
CLASS_DESCRIPTOR_RE = re.compile(r"^L(?:[^\s;/:]+/)*[^\s;/:]+;$")
METHOD_DESCRIPTOR_RE = re.compile(r"^\((?P<params>[^()]*)\)(?P<ret>\S+)$")
REGISTER_TOKEN_RE = re.compile(r"^(?P<prefix>[vp])(?P<num>\d+)$")
REGISTER_RANGE_RE = re.compile(r"^\{\s*(?P<start>[vp]\d+)\s*\.\.\s*(?P<end>[vp]\d+)\s*\}$")

CONSTRUCTOR_NAMES = ("<init>", "<clinit>")
ROOT_CLASS_DESCRIPTOR = "Ljava/lang/Object;"


class BodyItemKind(str, Enum):
    INSTRUCTION = "instruction"
    LABEL = "label"
    DIRECTIVE = "directive"
    COMMENT = "comment"


class ProbeKind(str, Enum):
    """Granularity of one probe. The value is the payload key written to the log."""
    CLASS = "CLASS"
    METHOD = "METHOD"
    STATEMENT = "STATEMENT"
    ACTIVITY = "ACTIVITY"
    SERVICE = "SERVICE"
    RECEIVER = "BROADCASTRECEIVER"
    PROVIDER = "CONTENTPROVIDER"

    @property
    def key(self) -> str:
        return self.value

    @classmethod
    def from_key(cls, key: str) -> Optional["ProbeKind"]:
        for kind in cls:
            if kind.value == key:
                return kind
        return None

    @classmethod
    def from_name(cls, name: str) -> "ProbeKind":
        """Accepts either the enum name (RECEIVER) or the payload key (BROADCASTRECEIVER)."""
        upper = name.strip().upper()
        if upper in cls.__members__:
            return cls[upper]
        kind = cls.from_key(upper)
        if kind is None:
            raise ValueError(f"Unknown probe kind: {name!r}")
        return kind


COMPONENT_PROBE_KINDS = (ProbeKind.ACTIVITY, ProbeKind.SERVICE, ProbeKind.RECEIVER, ProbeKind.PROVIDER)


@dataclass(frozen=True)
class BodyItem:
    kind: BodyItemKind
    text: str
    # Statement index over original instructions; None for everything else and for probes.
    index: Optional[int] = None
    # Text before register remapping, when remapping changed it.
    original_text: Optional[str] = field(default=None, compare=False)

    @property
    def is_instruction(self) -> bool:
        return self.kind is BodyItemKind.INSTRUCTION

    @property
    def opcode(self) -> str:
        return self.text.split(None, 1)[0] if self.is_instruction else ""


@dataclass(frozen=True)
class RegistersSpec:
    directive: str  # "registers" or "locals"
    count: int

    def __post_init__(self):
        if self.directive not in ("registers", "locals"):
            raise ValueError(f"Unknown register directive: {self.directive}")
        if self.count < 0:
            raise ValueError("Register count must be non-negative")


@dataclass(frozen=True)
class SmaliMethod:
    name: str
    descriptor: str
    access_flags: Tuple[str, ...] = ()
    registers: Optional[RegistersSpec] = None
    body: Tuple[BodyItem, ...] = ()
    # Set by allocate_probe_registers; not part of the smali text.
    probe_register: Optional[int] = field(default=None, compare=False)
    ineligible_reason: Optional[str] = field(default=None, compare=False)

    @property
    def signature(self) -> str:
        return f"{self.name}{self.descriptor}"

    @property
    def is_abstract_or_native(self) -> bool:
        return "abstract" in self.access_flags or "native" in self.access_flags

    @property
    def is_static(self) -> bool:
        return "static" in self.access_flags

    @property
    def is_constructor(self) -> bool:
        return self.name in CONSTRUCTOR_NAMES

    @property
    def has_body(self) -> bool:
        return not self.is_abstract_or_native and any(item.is_instruction for item in self.body)

    @property
    def instructions(self) -> Tuple[BodyItem, ...]:
        return tuple(item for item in self.body if item.is_instruction)

    @property
    def original_instructions(self) -> Tuple[BodyItem, ...]:
        """Instructions carrying a statement index (inserted probes carry none)."""
        return tuple(item for item in self.body if item.is_instruction and item.index is not None)

    @property
    def param_register_count(self) -> int:
        return param_register_count(self.descriptor, self.is_static)

    @property
    def locals_count(self) -> Optional[int]:
        if self.registers is None:
            return None
        if self.registers.directive == "locals":
            return self.registers.count
        return self.registers.count - self.param_register_count

    @property
    def total_registers(self) -> Optional[int]:
        locals_count = self.locals_count
        return None if locals_count is None else locals_count + self.param_register_count


@dataclass(frozen=True)
class SmaliClass:
    descriptor: str
    access_flags: Tuple[str, ...] = ()
    super_descriptor: Optional[str] = ROOT_CLASS_DESCRIPTOR
    interfaces: Tuple[str, ...] = ()
    source_file: Optional[str] = None
    annotations_raw: Tuple[str, ...] = ()
    fields_raw: Tuple[str, ...] = ()
    # Unrecognized top-level directives, kept verbatim.
    other_raw: Tuple[str, ...] = ()
    methods: Tuple[SmaliMethod, ...] = ()

    @property
    def is_interface(self) -> bool:
        return "interface" in self.access_flags

    def method(self, signature: str) -> Optional[SmaliMethod]:
        for m in self.methods:
            if m.signature == signature:
                return m
        return None

    def replace_method(self, old: SmaliMethod, new: SmaliMethod) -> "SmaliClass":
        return replace(self, methods=tuple(new if m is old else m for m in self.methods))


@dataclass(frozen=True)
class App:
    """A loaded smali tree: classes ordered by descriptor, with their relative source paths."""
    name: str
    classes: Tuple[SmaliClass, ...] = ()
    sources: Mapping[str, Path] = field(default_factory=dict)

    @property
    def class_table(self) -> Dict[str, SmaliClass]:
        return {c.descriptor: c for c in self.classes}

    def get(self, descriptor: str) -> Optional[SmaliClass]:
        for c in self.classes:
            if c.descriptor == descriptor:
                return c
        return None

    def iter_methods(self) -> Iterator[Tuple[SmaliClass, SmaliMethod]]:
        for c in self.classes:
            for m in c.methods:
                yield c, m

    def method_table(self) -> Dict[str, Tuple[SmaliClass, SmaliMethod]]:
        return {canonical_method_id(c, m): (c, m) for c, m in self.iter_methods()}


@dataclass(frozen=True)
class Probe:
    kind: ProbeKind
    payload: str
    # (class descriptor, method id, insertion position); position None until placed.
    anchor: Tuple[str, str, Optional[int]] = ("", "", None)

    def __post_init__(self):
        if not self.payload.startswith(f"{self.kind.key}="):
            raise ValueError(f"Probe payload must start with '{self.kind.key}=': {self.payload!r}")
        if "\n" in self.payload or "\r" in self.payload:
            raise ValueError("Probe payload must not contain a newline")


# --- Identifiers and payloads ---

def canonical_method_id(cls: SmaliClass, method: SmaliMethod) -> str:
    return method_id(cls.descriptor, method.signature)


def method_id(class_descriptor: str, signature: str) -> str:
    return f"{class_descriptor}->{signature}"


def split_method_id(mid: str) -> Tuple[str, str]:
    descriptor, sep, signature = mid.partition("->")
    if not sep:
        raise ValueError(f"Not a method id: {mid!r}")
    return descriptor, signature


_ESCAPES = {"\\": "\\u005c", "|": "\\u007c", "\n": "\\n", "\r": "\\u000d"}
_UNESCAPE_RE = re.compile(r"\\u([0-9a-fA-F]{4})|\\n")


def escape_payload_field(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def unescape_payload_field(text: str) -> str:
    def _sub(match: "re.Match[str]") -> str:
        if match.group(1) is None:
            return "\n"
        return chr(int(match.group(1), 16))
    return _UNESCAPE_RE.sub(_sub, text)


# Every character an escape sequence is written with.
_ESCAPE_ALPHABET = frozenset("\\un0123456789abcdef")


def identifier_escape_pivot(identifier: str) -> Optional[int]:
    """Offset of the first identifier character escape sequences never produce, or None."""
    for offset, ch in enumerate(identifier):
        if ch not in _ESCAPE_ALPHABET and ord(ch) <= 0xFFFF:
            return offset
    return None


def escape_identifier(payload: str, identifier: str) -> str:
    """
    Breaks up every occurrence of the log identifier inside a payload,
    overlapping ones included, by escaping its pivot character. Escaping
    never writes the pivot, so repeating until no occurrence is left ends.
    """
    if not identifier or identifier not in payload:
        return payload
    pivot = identifier_escape_pivot(identifier)
    if pivot is None:
        raise ValueError(f"Identifier {identifier!r} has no character that can be escaped unambiguously")
    escaped = f"\\u{ord(identifier[pivot]):04x}"
    occurrence = re.compile(f"(?={re.escape(identifier)})")
    while identifier in payload:
        targets = {match.start() + pivot for match in occurrence.finditer(payload)}
        payload = "".join(escaped if i in targets else ch for i, ch in enumerate(payload))
    return payload


def class_payload(descriptor: str) -> str:
    return f"{ProbeKind.CLASS.key}={descriptor}"


def method_payload(mid: str) -> str:
    return f"{ProbeKind.METHOD.key}={mid}"


def component_payload(kind: ProbeKind, descriptor: str) -> str:
    return f"{kind.key}={descriptor}"


def statement_payload(mid: str, instr_text: str, index: int) -> str:
    """`STATEMENT=<method id>|<instruction>|<index>`, with `|` and newlines escaped in the instruction."""
    if index < 0:
        raise ValueError("Statement index must be non-negative")
    return f"{ProbeKind.STATEMENT.key}={mid}|{escape_payload_field(instr_text)}|{index}"


def split_payload(payload: str) -> Tuple[str, str]:
    """Splits `<KEY>=<body>` at the first '='."""
    key, sep, body = payload.partition("=")
    if not sep:
        raise ValueError(f"Payload has no '=': {payload!r}")
    return key, body


def parse_statement_body(body: str) -> Tuple[str, str, int]:
    """Inverse of statement_payload's body: (method id, instruction text, index)."""
    mid, sep1, rest = body.partition("|")
    instr, sep2, index = rest.rpartition("|")
    if not sep1 or not sep2:
        raise ValueError(f"Malformed statement payload: {body!r}")
    return mid, unescape_payload_field(instr), int(index)


# --- Descriptors ---

def is_class_descriptor(text: str) -> bool:
    return bool(CLASS_DESCRIPTOR_RE.match(text))


def parse_param_types(descriptor: str) -> List[str]:
    match = METHOD_DESCRIPTOR_RE.match(descriptor)
    if not match:
        raise ValueError(f"Invalid method descriptor: {descriptor!r}")
    params = match.group("params")
    types: List[str] = []
    i = 0
    while i < len(params):
        start = i
        while params[i] == "[":
            i += 1
        if params[i] == "L":
            end = params.index(";", i)
            i = end + 1
        else:
            i += 1
        types.append(params[start:i])
    return types


def param_register_count(descriptor: str, is_static: bool) -> int:
    count = 0 if is_static else 1
    for t in parse_param_types(descriptor):
        count += 2 if t in ("J", "D") else 1
    return count


# --- Instruction text helpers ---

def _split_outside_quotes(text: str, separator: str) -> List[str]:
    parts: List[str] = []
    current: List[str] = []
    in_string = False
    escaped = False
    depth = 0
    for ch in text:
        if in_string:
            current.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == separator and depth == 0:
            parts.append("".join(current))
            current = []
            continue
        current.append(ch)
    parts.append("".join(current))
    return parts


def normalize_line(text: str) -> str:
    """Collapses whitespace runs to one space outside string literals and strips the ends."""
    out: List[str] = []
    in_string = False
    escaped = False
    pending_space = False
    for ch in text.strip():
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch.isspace():
            pending_space = True
            continue
        if pending_space and out:
            out.append(" ")
        pending_space = False
        out.append(ch)
        if ch == '"':
            in_string = True
    return "".join(out)


def split_instruction(text: str) -> Tuple[str, List[str]]:
    """Opcode and comma-separated operands (commas inside strings and braces are kept)."""
    opcode, _, rest = text.strip().partition(" ")
    rest = rest.strip()
    if not rest:
        return opcode, []
    return opcode, [op.strip() for op in _split_outside_quotes(rest, ",")]


def join_instruction(opcode: str, operands: List[str]) -> str:
    return opcode if not operands else f"{opcode} {', '.join(operands)}"


def register_operand_count(operands: List[str]) -> int:
    """Registers always lead the operand list; returns how many leading operands are registers."""
    count = 0
    for op in operands:
        if REGISTER_TOKEN_RE.match(op) or op.startswith("{"):
            count += 1
        else:
            break
    return count


def parse_register_list(operand: str) -> Tuple[List[str], bool]:
    """Registers named by one operand: plain token, `{a, b}` list or `{a .. b}` range (flag True)."""
    match = REGISTER_RANGE_RE.match(operand)
    if match:
        return [match.group("start"), match.group("end")], True
    if operand.startswith("{"):
        inner = operand.strip("{} ")
        return ([r.strip() for r in inner.split(",")] if inner else []), False
    return [operand], False


def register_index(token: str, locals_count: int) -> int:
    """Absolute v-index of a register token (p-aliases resolve past the locals)."""
    match = REGISTER_TOKEN_RE.match(token)
    if not match:
        raise ValueError(f"Not a register: {token!r}")
    num = int(match.group("num"))
    return num if match.group("prefix") == "v" else locals_count + num


def instruction_registers(text: str, locals_count: int) -> List[int]:
    """Absolute indices of every register an instruction names (range endpoints expanded)."""
    _, operands = split_instruction(text)
    indices: List[int] = []
    for op in operands[:register_operand_count(operands)]:
        regs, is_range = parse_register_list(op)
        if is_range:
            start, end = (register_index(r, locals_count) for r in regs)
            indices.extend(range(start, end + 1))
        else:
            indices.extend(register_index(r, locals_count) for r in regs)
    return indices


_WIDE_TYPES = ("long", "double")
_WIDE_FIELD_ACCESS_RE = re.compile(r"^[ais](get|put)-wide")


def wide_operand_slots(opcode: str) -> Tuple[int, ...]:
    """Register operand slots of a non-invoke opcode that name the low half of a long/double pair."""
    base = opcode.split("/")[0]
    two_addr = opcode.endswith("/2addr")
    if base == "move-wide":
        return (0, 1)
    if base in ("move-result-wide", "return-wide", "const-wide") or _WIDE_FIELD_ACCESS_RE.match(base):
        return (0,)
    if base in ("cmp-long", "cmpl-double", "cmpg-double"):
        return (1, 2)
    if "-to-" in base:
        source, _, target = base.partition("-to-")
        return tuple(slot for slot, kind in ((0, target), (1, source)) if kind in _WIDE_TYPES)
    head, _, tail = base.rpartition("-")
    if tail not in _WIDE_TYPES:
        return ()
    if head in ("shl", "shr", "ushr"):
        return (0,) if two_addr else (0, 1)
    if head in ("neg", "not") or two_addr:
        return (0, 1)
    return (0, 1, 2)


def _invoke_wide_positions(opcode: str, method_ref: str) -> List[int]:
    """Positions in a non-range invoke's register list where a long/double argument starts."""
    descriptor = method_ref.partition("->")[2]
    descriptor = descriptor[descriptor.find("("):] if "(" in descriptor else ""
    try:
        params = parse_param_types(descriptor)
    except ValueError:
        return []
    positions: List[int] = []
    cursor = 0 if opcode.startswith("invoke-static") else 1
    for t in params:
        if t in ("J", "D"):
            positions.append(cursor)
            cursor += 2
        else:
            cursor += 1
    return positions


def wide_register_pairs(text: str, locals_count: int) -> List[int]:
    """Absolute index of the low register of every long/double pair an instruction names."""
    opcode, operands = split_instruction(text)
    count = register_operand_count(operands)
    starts: List[int] = []
    if opcode.startswith("invoke-"):
        if opcode.endswith("/range") or opcode.startswith(("invoke-polymorphic", "invoke-custom")) \
                or count != 1 or len(operands) <= count:
            return starts
        regs, _ = parse_register_list(operands[0])
        for position in _invoke_wide_positions(opcode, operands[count]):
            if position < len(regs):
                starts.append(register_index(regs[position], locals_count))
        return starts
    for slot in wide_operand_slots(opcode):
        if slot < count:
            regs, is_range = parse_register_list(operands[slot])
            if regs and not is_range:
                starts.append(register_index(regs[0], locals_count))
    return starts


# --- Smali string literals ---

def smali_string_literal(value: str) -> str:
    out = ['"']
    for ch in value:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) > 0xFFFF:
            high, low = divmod(ord(ch) - 0x10000, 0x400)
            out.append(f"\\u{0xD800 + high:04x}\\u{0xDC00 + low:04x}")
        elif ord(ch) < 0x20 or ord(ch) > 0x7E:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


_SIMPLE_STRING_ESCAPES = {"n": "\n", "r": "\r", "t": "\t", "b": "\b", "f": "\f",
                          '"': '"', "'": "'", "\\": "\\"}


def parse_smali_string_literal(literal: str) -> str:
    literal = literal.strip()
    if len(literal) < 2 or literal[0] != '"' or literal[-1] != '"':
        raise ValueError(f"Not a smali string literal: {literal!r}")
    body = literal[1:-1]
    out: List[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = body[i + 1]
        if nxt == "u":
            out.append(chr(int(body[i + 2:i + 6], 16)))
            i += 6
        else:
            out.append(_SIMPLE_STRING_ESCAPES.get(nxt, nxt))
            i += 2
    # Java strings are UTF-16: join escaped surrogate pairs.
    return "".join(out).encode("utf-16", "surrogatepass").decode("utf-16", "surrogatepass")
