# src/utils/generate_config_from_schema.py
import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, List

import yaml

from src.utils.config_schema import DEFAULT_SCHEMA_PATH, PROJECT_ROOT, load_schema
from src.utils.log import log

DEFAULT_OUTPUT_PATH = PROJECT_ROOT / "config.yaml"


def format_yaml_value(value: Any) -> str:
    """YAML text for a scalar default (None, bool, str, number)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, str):
        special_chars = ':{}[] ,&*#?|-<>=!%@`'
        if not value or "'" in value or any(c in special_chars for c in value):
            return "'" + value.replace("'", "''") + "'"
        return value
    return str(value)


def _format_entry(key: str, field_type: str, default: Any) -> List[str]:
    if field_type == "list":
        if not default:
            return [f"{key}: []"]
        return [f"{key}:"] + [f"  - {format_yaml_value(item)}" for item in default]
    if field_type == "map":
        if not default:
            return [f"{key}: {{}}"]
        dumped = yaml.safe_dump({key: default}, allow_unicode=True, sort_keys=False, indent=2)
        return dumped.rstrip("\n").split("\n")
    return [f"{key}: {format_yaml_value(default)}"]


def generate_default_config(
    schema_path: Path = DEFAULT_SCHEMA_PATH,
    output_path: Path = DEFAULT_OUTPUT_PATH,
    overwrite: bool = False,
) -> bool:
    """
    Writes a default config file from the schema, with each description
    (and enum options) as a comment above its key, in schema order.

    Args:
        schema_path: Path to the schema YAML file.
        output_path: Where the config should be written.
        overwrite: Replace an existing file. When False an existing file is left alone.

    Returns:
        True when the file exists afterwards, False on error.
    """
    if output_path.exists() and not overwrite:
        log(f"Config file already exists at '{output_path}'. Generation skipped.", "DEBUG")
        return True

    schema = load_schema(schema_path)
    if not schema:
        log(f"Cannot generate config: failed to load schema from '{schema_path}'.", "ERROR")
        return False

    lines: List[str] = [
        f"# Default SmaliCov configuration generated from {schema_path.name}",
        f"# Timestamp: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
        "",
    ]
    for key, spec in schema.items():
        if not isinstance(spec, dict):
            log(f"Skipping invalid schema entry for key '{key}'.", "WARNING")
            continue
        description = spec.get("description", "")
        if description:
            lines.extend(f"# {line.strip()}" for line in description.strip().split("\n"))
        if isinstance(spec.get("options"), list):
            lines.append(f"# Options: {' | '.join(map(str, spec['options']))}")
        lines.extend(_format_entry(key, spec.get("type", "string"), spec.get("default")))
        lines.append("")

    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines))
        log(f"Default configuration file generated: '{output_path}'", "SUCCESS")
        return True
    except Exception as e:
        log(f"Error writing configuration file '{output_path}': {e}", "ERROR")
        log(traceback.format_exc(), "DEBUG")
        return False
