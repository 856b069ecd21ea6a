# src/errors.py
from pathlib import Path
from typing import List, Optional, Sequence


class SmaliCovError(Exception):
    """Base class for every error raised by the toolchain."""


class ConfigError(SmaliCovError):
    """Invalid configuration value (identifier, granularities, hooks file)."""


class SmaliParseError(SmaliCovError):
    """
    A smali source could not be turned into a SmaliClass.

    Carries the full list of diagnostics (errors and warnings) collected
    while parsing, so the caller can report every problem at once.
    """

    def __init__(self, diagnostics: Sequence["ParseDiagnostic"]):  # noqa: F821
        self.diagnostics = list(diagnostics)
        errors = [d for d in self.diagnostics if d.severity == "error"]
        first = errors[0] if errors else (self.diagnostics[0] if self.diagnostics else None)
        super().__init__(str(first) if first else "smali parse error")


class AppLoadError(SmaliCovError):
    """Loading a smali tree failed: parse errors in one or more files, or duplicate descriptors."""

    def __init__(self, message: str, diagnostics: Optional[List["ParseDiagnostic"]] = None,  # noqa: F821
                 paths: Optional[List[Path]] = None):
        self.diagnostics = list(diagnostics or [])
        self.paths = list(paths or [])
        super().__init__(message)


class InstrumentationError(SmaliCovError):
    """Instrumentation could not be completed (caller bug or checker violation)."""


class AlreadyInstrumentedError(InstrumentationError):
    """The input app already carries a log-checker class from a previous run."""

    def __init__(self, descriptor: str):
        self.descriptor = descriptor
        super().__init__(f"App is already instrumented: found log-checker class {descriptor}")


class ComponentDetectionError(SmaliCovError):
    """Superclass chain could not be walked (cycle)."""


class TraceError(SmaliCovError):
    """An execution path step is invalid for the app it is applied to."""

    def __init__(self, position: int, message: str):
        self.position = position
        super().__init__(f"Invalid path step {position}: {message}")


class HookError(SmaliCovError):
    """An external tool hook (disassemble/assemble/align/sign) failed."""

    def __init__(self, name: str, command: str, returncode: Optional[int] = None, stderr: str = ""):
        self.name = name
        self.command = command
        self.returncode = returncode
        self.stderr = stderr
        detail = f" (exit code {returncode})" if returncode is not None else ""
        message = f"Hook '{name}' failed{detail}: {command}"
        if stderr.strip():
            message += f"\n{stderr.strip()}"
        super().__init__(message)


class UsageError(SmaliCovError):
    """Command-line arguments are missing or contradictory (exit status 2)."""
