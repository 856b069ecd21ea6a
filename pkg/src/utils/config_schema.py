# src/utils/config_schema.py

from pathlib import Path
from typing import Any, Dict, List

import yaml

from src.utils.log import PROJECT_ROOT, log

DEFAULT_SCHEMA_PATH = PROJECT_ROOT / "config_schema.yaml"

_TYPE_CHECKS = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "bool": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "map": lambda v: isinstance(v, dict),
    "enum": lambda v: isinstance(v, str),
}


def load_schema(schema_path: Path = DEFAULT_SCHEMA_PATH) -> dict:
    """
    Loads the YAML configuration schema.

    Args:
        schema_path: Path to the schema file (config_schema.yaml in the project root by default).

    Returns:
        The schema dictionary, or an empty dictionary if the file is missing or invalid.
    """
    if not schema_path.is_file():
        log(f"Configuration schema file not found at: {schema_path}", "ERROR")
        return {}
    try:
        with open(schema_path, "r", encoding="utf-8") as f:
            schema = yaml.safe_load(f)
    except (yaml.YAMLError, IOError) as e:
        log(f"Error reading configuration schema '{schema_path.name}': {e}", "ERROR")
        return {}
    if not isinstance(schema, dict):
        log(f"Configuration schema root is not a mapping: {schema_path}", "ERROR")
        return {}
    log(f"Configuration schema loaded from: {schema_path.name}", "DEBUG")
    return schema


def schema_defaults(schema: dict) -> Dict[str, Any]:
    return {key: spec.get("default") for key, spec in schema.items() if isinstance(spec, dict)}


def validate_config(config: dict, schema: dict) -> List[str]:
    """Problems with `config` against `schema`: wrong types and enum values outside their options. Unknown keys pass."""
    problems: List[str] = []
    for key, spec in schema.items():
        if not isinstance(spec, dict) or config.get(key) is None:
            continue
        value = config[key]
        field_type = spec.get("type", "string")
        check = _TYPE_CHECKS.get(field_type)
        if check is not None and not check(value):
            problems.append(f"'{key}' should be of type {field_type}, got {type(value).__name__}")
        elif field_type == "enum" and value not in (spec.get("options") or []):
            problems.append(f"'{key}' must be one of {spec.get('options')}, got {value!r}")
    return problems
