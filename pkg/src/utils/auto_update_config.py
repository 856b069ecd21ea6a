# src/utils/auto_update_config.py
from pathlib import Path

import yaml

from src.utils.config_schema import DEFAULT_SCHEMA_PATH, load_schema
from src.utils.log import log


def auto_update_config(config_path: Path, schema_path: Path = DEFAULT_SCHEMA_PATH) -> bool:
    """
    Adds every schema key missing from an existing config file, with its
    schema default. Existing values are never overwritten.

    Args:
        config_path: Path to the configuration file.
        schema_path: Path to the schema definition file.

    Returns:
        True if the file was updated and saved, False otherwise.
    """
    if not config_path.is_file():
        log(f"Config file not found at '{config_path}'. Auto-update skipped.", "DEBUG")
        return False
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            current = yaml.safe_load(f) or {}
    except (yaml.YAMLError, IOError) as e:
        log(f"Could not read '{config_path}': {e}. Auto-update aborted.", "ERROR")
        return False
    if not isinstance(current, dict):
        log(f"Config file content at '{config_path}' is not a mapping. Auto-update aborted.", "ERROR")
        return False

    schema = load_schema(schema_path)
    missing = [key for key, spec in schema.items() if isinstance(spec, dict) and key not in current]
    if not missing:
        log(f"Configuration file '{config_path.name}' is up to date with the schema.", "DEBUG")
        return False

    for key in missing:
        current[key] = schema[key].get("default")
        log(f"Added missing config key '{key}' with its default value.", "DEBUG")
    try:
        with open(config_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(current, f, allow_unicode=True, sort_keys=False, indent=2)
    except Exception as e:
        log(f"Failed to write updated config file '{config_path.name}': {e}", "ERROR")
        return False
    log(f"Config file '{config_path.name}' updated with {len(missing)} missing keys.", "SUCCESS")
    return True
