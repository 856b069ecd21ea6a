# src/tool_hooks.py
"""
External commands for the steps SmaliCov does not implement itself:
APK disassembly, reassembly, alignment and signing.

Hooks are read from a `key=command-template` file. Templates use `{in}`
and `{out}` placeholders, e.g.

    disassemble_cmd=apktool d -f -o {out} {in}
    assemble_cmd=apktool b -o {out} {in}
    align_cmd=zipalign -f -p 4 {in} {out}
    sign_cmd=apksigner sign --ks debug.keystore --ks-pass pass:android --out {out} {in}
"""

import os
import shlex
import subprocess
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

from src.errors import ConfigError, HookError
from src.utils.log import log

HOOK_KEYS = ("disassemble_cmd", "assemble_cmd", "align_cmd", "sign_cmd")
HOOKS_ENV_VAR = "SMALICOV_HOOKS"


@dataclass(frozen=True)
class ToolHooks:
    disassemble_cmd: Optional[str] = None
    assemble_cmd: Optional[str] = None
    align_cmd: Optional[str] = None
    sign_cmd: Optional[str] = None

    @property
    def supports_apk(self) -> bool:
        return bool(self.disassemble_cmd and self.assemble_cmd)

    def configured(self) -> Dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name)}


def parse_hooks(text: str, source: str = "<hooks>") -> ToolHooks:
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, template = stripped.partition("=")
        key = key.strip()
        if not sep or key not in HOOK_KEYS:
            raise ConfigError(f"{source}:{number}: expected one of {', '.join(HOOK_KEYS)} as 'key=command'")
        template = template.strip()
        if "{in}" not in template or "{out}" not in template:
            raise ConfigError(f"{source}:{number}: '{key}' must use both {{in}} and {{out}} placeholders")
        values[key] = template
    return ToolHooks(**values)


def load_hooks(path: Optional[Path] = None) -> ToolHooks:
    """Hooks from `SMALICOV_HOOKS` or `path`. No file configured means no hooks."""
    env_path = os.environ.get(HOOKS_ENV_VAR)
    chosen = Path(env_path) if env_path else (Path(path) if path else None)
    if chosen is None:
        return ToolHooks()
    if not chosen.is_file():
        if env_path:
            raise ConfigError(f"{HOOKS_ENV_VAR} points to a missing file: {chosen}")
        log(f"Hooks file '{chosen}' not found; APK input and repackaging are unavailable.", "DEBUG")
        return ToolHooks()
    hooks = parse_hooks(chosen.read_text(encoding="utf-8"), str(chosen))
    log(f"Loaded tool hooks from '{chosen}': {', '.join(hooks.configured()) or 'none'}.", "DEBUG")
    return hooks


def render_command(template: str, source: Path, target: Path) -> List[str]:
    return [part.replace("{in}", str(source)).replace("{out}", str(target)) for part in shlex.split(template)]


def run_hook(name: str, template: Optional[str], source: Path, target: Path) -> Path:
    """Runs one hook with captured output. A non-zero exit raises HookError carrying stderr."""
    if not template:
        raise ConfigError(f"Hook '{name}' is not configured")
    command = render_command(template, source, target)
    printable = shlex.join(command)
    log(f"Running {name}: {printable}", "INFO")
    try:
        result = subprocess.run(command, capture_output=True, text=True, check=False)
    except OSError as e:
        raise HookError(name, printable, None, str(e)) from e
    if result.returncode != 0:
        raise HookError(name, printable, result.returncode, result.stderr)
    if result.stdout.strip():
        log(result.stdout.strip(), "DEBUG")
    return target


def disassemble(hooks: ToolHooks, apk: Path, out_dir: Path) -> Path:
    return run_hook("disassemble_cmd", hooks.disassemble_cmd, apk, out_dir)


def repackage(hooks: ToolHooks, smali_tree: Path, out_apk: Path) -> Path:
    """Assembles `smali_tree` into `out_apk`, then aligns and signs it when those hooks exist."""
    work = out_apk.with_suffix(".unsigned.apk") if (hooks.align_cmd or hooks.sign_cmd) else out_apk
    current = run_hook("assemble_cmd", hooks.assemble_cmd, smali_tree, work)
    if hooks.align_cmd:
        aligned = out_apk.with_suffix(".aligned.apk") if hooks.sign_cmd else out_apk
        current = run_hook("align_cmd", hooks.align_cmd, current, aligned)
    if hooks.sign_cmd:
        current = run_hook("sign_cmd", hooks.sign_cmd, current, out_apk)
    log(f"Repackaged APK written to '{current}'.", "SUCCESS")
    return current
