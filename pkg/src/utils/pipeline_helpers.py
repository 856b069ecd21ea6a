# src/utils/pipeline_helpers.py
from pathlib import Path
from typing import List


def merge_configs(base: dict, overrides: dict) -> dict:
    """
    Recursively merges `overrides` into a copy of `base`.

    Nested dictionaries are merged; any other override value (scalar, list,
    or a type mismatch) replaces the base value. Overrides that are None
    are ignored so unset CLI flags keep the configured value.

    Args:
        base: The base configuration dictionary.
        overrides: Values to apply on top of it.

    Returns:
        A new merged dictionary.
    """
    merged = base.copy()
    for key, value_override in overrides.items():
        if value_override is None:
            continue
        value_base = merged.get(key)
        if isinstance(value_base, dict) and isinstance(value_override, dict):
            merged[key] = merge_configs(value_base, value_override)
        else:
            merged[key] = value_override
    return merged


def normalize_prefix(entry: str) -> str:
    """Dotted package names (`com.google.android`) become descriptor prefixes (`Lcom/google/android/`)."""
    entry = entry.strip()
    if "." not in entry and entry.startswith("L"):
        return entry
    entry = "L" + entry.replace(".", "/")
    return entry if entry.endswith((";", "/")) else entry + "/"


def read_prefix_file(path: Path) -> List[str]:
    """Library prefixes, one per line with `#` comments."""
    prefixes: List[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        entry = line.split("#", 1)[0].strip()
        if entry:
            prefixes.append(normalize_prefix(entry))
    return prefixes
