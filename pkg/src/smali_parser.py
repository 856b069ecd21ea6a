# src/smali_parser.py
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.errors import AppLoadError, SmaliParseError
from src.smali_ir import (
    App, BodyItem, BodyItemKind, RegistersSpec, SmaliClass, SmaliMethod,
    ROOT_CLASS_DESCRIPTOR, is_class_descriptor, normalize_line, parse_param_types,
)
from src.utils.log import log

SMALI_SUFFIX = ".smali"
INDENT = "    "

# Multi-line constructs kept verbatim: opening directive -> closing directive.
_OPAQUE_BLOCKS = {
    ".annotation": ".end annotation",
    ".subannotation": ".end subannotation",
    ".packed-switch": ".end packed-switch",
    ".sparse-switch": ".end sparse-switch",
    ".array-data": ".end array-data",
}
# Single-line directives allowed inside a method body.
_METHOD_DIRECTIVES = {
    ".line", ".prologue", ".epilogue", ".catch", ".catchall", ".local",
    ".end local", ".restart local", ".source", ".param", ".parameter",
}


@dataclass(frozen=True)
class ParseDiagnostic:
    file: Optional[Path]
    line: int
    message: str
    severity: str = "error"  # "error" or "warning"

    def __str__(self) -> str:
        where = f"{self.file}:{self.line}" if self.file else f"line {self.line}"
        return f"{where}: {self.severity}: {self.message}"


class _Parser:
    """Line-oriented smali reader. Collects diagnostics instead of stopping at the first problem."""

    def __init__(self, source: str, file: Optional[Path]):
        self.lines = source.replace("\r\n", "\n").split("\n")
        self.file = file
        self.pos = 0
        self.diagnostics: List[ParseDiagnostic] = []

    def error(self, line: int, message: str):
        self.diagnostics.append(ParseDiagnostic(self.file, line, message, "error"))

    def warning(self, line: int, message: str):
        self.diagnostics.append(ParseDiagnostic(self.file, line, message, "warning"))

    def _read_block(self, start: int, closing: str) -> Optional[str]:
        """Consumes lines from `start` through the matching closing directive and returns them verbatim."""
        opening = self.lines[start].strip().split(None, 1)[0]
        depth = 0
        i = start
        while i < len(self.lines):
            stripped = self.lines[i].strip()
            head = stripped.split(None, 1)[0] if stripped else ""
            if head == opening:
                depth += 1
            elif stripped.startswith(closing):
                depth -= 1
                if depth == 0:
                    self.pos = i + 1
                    return "\n".join(self.lines[start:i + 1])
            i += 1
        self.error(start + 1, f"Unterminated '{opening}' block (expected '{closing}')")
        self.pos = len(self.lines)
        return None

    def _read_member_block(self, start: int, closing: str, verbatim: bool = True) -> str:
        """`.field`/`.param` optionally followed by annotations and an explicit end directive."""
        i = start + 1
        while i < len(self.lines) and not self.lines[i].strip():
            i += 1
        if i < len(self.lines) and self.lines[i].strip().startswith(".annotation"):
            j = i
            while j < len(self.lines):
                stripped = self.lines[j].strip()
                if stripped.startswith(closing):
                    self.pos = j + 1
                    return "\n".join(self.lines[start:j + 1])
                # A member without its end directive: the annotation belongs to the enclosing scope.
                if stripped.startswith((".method", ".field", ".param", ".end method")) or \
                        (stripped and stripped[0] not in ".#" and self._outside_annotation(i, j)):
                    break
                j += 1
        self.pos = start + 1
        return self.lines[start] if verbatim else normalize_line(self.lines[start])

    def _outside_annotation(self, first: int, j: int) -> bool:
        """True when line j is not enclosed by an annotation block opened at or after `first`."""
        depth = 0
        for k in range(first, j):
            stripped = self.lines[k].strip()
            if stripped.startswith((".annotation", ".subannotation")):
                depth += 1
            elif stripped.startswith((".end annotation", ".end subannotation")):
                depth -= 1
        return depth == 0

    def parse(self) -> Optional[SmaliClass]:
        descriptor: Optional[str] = None
        access_flags: Tuple[str, ...] = ()
        super_descriptor: Optional[str] = None
        source_file: Optional[str] = None
        interfaces: List[str] = []
        annotations: List[str] = []
        fields: List[str] = []
        other: List[str] = []
        methods: List[SmaliMethod] = []
        seen_signatures: Dict[str, int] = {}

        while self.pos < len(self.lines):
            lineno = self.pos + 1
            stripped = self.lines[self.pos].strip()
            if not stripped or stripped.startswith("#"):
                self.pos += 1
                continue
            head, _, rest = stripped.partition(" ")
            rest = rest.strip()
            if head == ".class":
                tokens = rest.split()
                if descriptor is not None:
                    self.error(lineno, "Duplicate '.class' directive")
                elif not tokens or not is_class_descriptor(tokens[-1]):
                    self.error(lineno, f"Invalid class descriptor in '.class': {rest!r}")
                else:
                    descriptor = tokens[-1]
                    access_flags = tuple(tokens[:-1])
                self.pos += 1
            elif head == ".super":
                if not is_class_descriptor(rest):
                    self.error(lineno, f"Invalid super descriptor: {rest!r}")
                super_descriptor = rest
                self.pos += 1
            elif head == ".implements":
                if not is_class_descriptor(rest):
                    self.error(lineno, f"Invalid interface descriptor: {rest!r}")
                interfaces.append(rest)
                self.pos += 1
            elif head == ".source":
                source_file = rest
                self.pos += 1
            elif head == ".annotation":
                block = self._read_block(self.pos, ".end annotation")
                if block is not None:
                    annotations.append(block)
            elif head == ".field":
                fields.append(self._read_member_block(self.pos, ".end field"))
            elif head == ".method":
                method = self._parse_method(rest, lineno)
                if method is None:
                    continue
                if method.signature in seen_signatures:
                    self.error(lineno, f"Duplicate method signature '{method.signature}' "
                                       f"(first defined at line {seen_signatures[method.signature]})")
                    continue
                seen_signatures[method.signature] = lineno
                methods.append(method)
            else:
                self.warning(lineno, f"Unrecognized top-level line preserved verbatim: {stripped!r}")
                other.append(self.lines[self.pos])
                self.pos += 1

        if descriptor is None:
            self.error(1, "Missing '.class' header")
        if super_descriptor is None and descriptor != ROOT_CLASS_DESCRIPTOR:
            self.error(1, "Missing '.super' header")
        if any(d.severity == "error" for d in self.diagnostics):
            return None
        return SmaliClass(
            descriptor=descriptor,
            access_flags=access_flags,
            super_descriptor=super_descriptor,
            interfaces=tuple(interfaces),
            source_file=source_file,
            annotations_raw=tuple(annotations),
            fields_raw=tuple(fields),
            other_raw=tuple(other),
            methods=tuple(methods),
        )

    def _parse_method(self, header: str, lineno: int) -> Optional[SmaliMethod]:
        tokens = header.split()
        if not tokens or "(" not in tokens[-1]:
            self.error(lineno, f"Invalid method header: {header!r}")
            self._skip_to_end_method()
            return None
        name, paren, desc_rest = tokens[-1].partition("(")
        descriptor = paren + desc_rest
        try:
            parse_param_types(descriptor)
        except (ValueError, IndexError):
            self.error(lineno, f"Invalid method descriptor: {descriptor!r}")
            self._skip_to_end_method()
            return None
        access_flags = tuple(tokens[:-1])

        registers: Optional[RegistersSpec] = None
        body: List[BodyItem] = []
        index = 0
        self.pos += 1
        while self.pos < len(self.lines):
            item_line = self.pos + 1
            raw = self.lines[self.pos]
            stripped = raw.strip()
            if not stripped:
                self.pos += 1
                continue
            if stripped == ".end method":
                self.pos += 1
                break
            if stripped.startswith(".method"):
                self.error(lineno, f"Unterminated '.method {name}{descriptor}'")
                return None
            head = stripped.split(None, 1)[0]
            if stripped.startswith("#"):
                body.append(BodyItem(BodyItemKind.COMMENT, stripped))
                self.pos += 1
            elif stripped.startswith(":"):
                body.append(BodyItem(BodyItemKind.LABEL, normalize_line(stripped)))
                self.pos += 1
            elif head in (".registers", ".locals"):
                try:
                    registers = RegistersSpec(head[1:], int(stripped.split()[1]))
                except (IndexError, ValueError):
                    self.error(item_line, f"Invalid register directive: {stripped!r}")
                self.pos += 1
            elif head in _OPAQUE_BLOCKS:
                block = self._read_block(self.pos, _OPAQUE_BLOCKS[head])
                if block is None:
                    return None
                body.append(BodyItem(BodyItemKind.DIRECTIVE, block))
            elif head == ".param":
                body.append(BodyItem(BodyItemKind.DIRECTIVE,
                                     self._read_member_block(self.pos, ".end param", verbatim=False)))
            elif head.startswith("."):
                if head not in _METHOD_DIRECTIVES and not stripped.startswith((".end local", ".restart local")):
                    self.warning(item_line, f"Unrecognized directive preserved verbatim: {stripped!r}")
                body.append(BodyItem(BodyItemKind.DIRECTIVE, normalize_line(stripped)))
                self.pos += 1
            else:
                body.append(BodyItem(BodyItemKind.INSTRUCTION, normalize_line(stripped), index))
                index += 1
                self.pos += 1
        else:
            self.error(lineno, f"Unterminated '.method {name}{descriptor}'")
            return None

        method = SmaliMethod(name=name, descriptor=descriptor, access_flags=access_flags,
                             registers=registers, body=tuple(body))
        if method.is_abstract_or_native and index:
            self.error(lineno, f"Abstract/native method '{method.signature}' has instructions")
            return None
        if not method.is_abstract_or_native and index and registers is None:
            self.warning(lineno, f"Method '{method.signature}' has no '.registers'/'.locals' directive")
        locals_count = method.locals_count
        if locals_count is not None and locals_count < 0:
            self.error(lineno, f"Method '{method.signature}' declares fewer registers than its parameters need")
            return None
        return method

    def _skip_to_end_method(self):
        while self.pos < len(self.lines) and self.lines[self.pos].strip() != ".end method":
            self.pos += 1
        self.pos += 1


def parse_class(source: str, file: Optional[Path] = None,
                diagnostics: Optional[List[ParseDiagnostic]] = None) -> SmaliClass:
    """
    Parses smali source text into a SmaliClass.

    Warnings are appended to `diagnostics` (when given) and logged. Any error
    aborts with SmaliParseError carrying every diagnostic found in the file.
    """
    parser = _Parser(source, file)
    cls = parser.parse()
    if diagnostics is not None:
        diagnostics.extend(parser.diagnostics)
    for diag in parser.diagnostics:
        if diag.severity == "warning":
            log(str(diag), "WARNING")
    if cls is None:
        raise SmaliParseError(parser.diagnostics)
    return cls


def print_class(cls: SmaliClass) -> str:
    """Canonical smali text: headers, annotations, fields, other directives, then methods. LF endings."""
    lines: List[str] = [f".class {' '.join((*cls.access_flags, cls.descriptor))}"]
    if cls.super_descriptor is not None:
        lines.append(f".super {cls.super_descriptor}")
    if cls.source_file is not None:
        lines.append(f".source {cls.source_file}")
    if cls.interfaces:
        lines.append("")
        lines.extend(f".implements {i}" for i in cls.interfaces)
    for group in (cls.annotations_raw, cls.fields_raw, cls.other_raw):
        if group:
            lines.append("")
            for block in group:
                lines.append(block)
    for method in cls.methods:
        lines.append("")
        lines.extend(print_method(method))
    return "\n".join(lines) + "\n"


def print_method(method: SmaliMethod) -> List[str]:
    header = " ".join((*method.access_flags, method.signature))
    lines = [f".method {header}"]
    if method.registers is not None:
        lines.append(f"{INDENT}.{method.registers.directive} {method.registers.count}")
    for item in method.body:
        if item.kind is BodyItemKind.DIRECTIVE and "\n" in item.text:
            lines.append(item.text)
        else:
            lines.append(f"{INDENT}{item.text}")
    lines.append(".end method")
    return lines


def _read_and_parse(root: Path, path: Path) -> Tuple[Path, Optional[SmaliClass], List[ParseDiagnostic]]:
    diagnostics: List[ParseDiagnostic] = []
    rel = path.relative_to(root)
    try:
        source = path.read_text(encoding="utf-8")
        return rel, parse_class(source, rel, diagnostics), diagnostics
    except SmaliParseError as e:
        return rel, None, e.diagnostics
    except (OSError, UnicodeDecodeError) as e:
        return rel, None, [ParseDiagnostic(rel, 0, f"Cannot read file: {e}")]


def load_app(root: Path, workers: int = 4, name: Optional[str] = None) -> App:
    """
    Parses every `*.smali` file under `root` (any nesting) into an App.

    Files are parsed in parallel; the result is ordered by descriptor and does
    not depend on scheduling. Any failing file or duplicate descriptor raises
    AppLoadError naming every offending path.
    """
    root = Path(root)
    if not root.is_dir():
        raise AppLoadError(f"Smali root is not a directory: {root}")
    paths = sorted(p for p in root.rglob(f"*{SMALI_SUFFIX}") if p.is_file())
    log(f"Loading {len(paths)} smali files from '{root}' with {workers} workers...", "INFO")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda p: _read_and_parse(root, p), paths))

    failures: List[ParseDiagnostic] = []
    failed_paths: List[Path] = []
    classes: Dict[str, SmaliClass] = {}
    sources: Dict[str, Path] = {}
    duplicates: List[str] = []
    for rel, cls, diagnostics in results:
        if cls is None:
            failed_paths.append(rel)
            failures.extend(d for d in diagnostics if d.severity == "error")
            continue
        if cls.descriptor in classes:
            duplicates.append(f"{cls.descriptor} declared in both '{sources[cls.descriptor]}' and '{rel}'")
            failed_paths.extend([sources[cls.descriptor], rel])
            continue
        classes[cls.descriptor] = cls
        sources[cls.descriptor] = rel

    if failures or duplicates:
        lines = [str(d) for d in failures] + [f"Duplicate class descriptor: {d}" for d in duplicates]
        for line in lines:
            log(line, "ERROR")
        raise AppLoadError(
            f"Failed to load smali tree '{root}' ({len(set(failed_paths))} failing files):\n" + "\n".join(lines),
            diagnostics=failures, paths=failed_paths,
        )

    ordered = tuple(classes[d] for d in sorted(classes))
    log(f"Loaded {len(ordered)} classes from '{root}'.", "SUCCESS")
    return App(name=name or root.resolve().name, classes=ordered,
               sources={d: sources[d] for d in sorted(sources)})


def descriptor_to_path(descriptor: str) -> Path:
    return Path(descriptor[1:-1] + SMALI_SUFFIX)


def smali_root_of(app: App) -> Path:
    """Directory (relative to the tree root) holding the first class's package tree."""
    for descriptor, rel in app.sources.items():
        expected = descriptor_to_path(descriptor).parts
        if len(rel.parts) >= len(expected) and rel.parts[-len(expected):] == expected:
            return Path(*rel.parts[:len(rel.parts) - len(expected)])
    return Path()


def write_app(app: App, out_dir: Path) -> List[Path]:
    """Writes every class of `app` under `out_dir`, keeping relative paths. New classes go under the smali root."""
    out_dir = Path(out_dir)
    default_root = smali_root_of(app)
    written: List[Path] = []
    for cls in app.classes:
        rel = app.sources.get(cls.descriptor) or default_root / descriptor_to_path(cls.descriptor)
        target = out_dir / rel
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "w", encoding="utf-8", newline="\n") as f:
                f.write(print_class(cls))
        except OSError as e:
            log(f"Failed to write '{target}': {e}", "ERROR")
            log(traceback.format_exc(), "DEBUG")
            raise
        written.append(target)
    log(f"Wrote {len(written)} smali files to '{out_dir}'.", "INFO")
    return written
