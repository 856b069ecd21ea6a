# src/utils/load_config.py

import os
import traceback
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from src.errors import ConfigError
from src.utils.auto_update_config import auto_update_config
from src.utils.config_schema import DEFAULT_SCHEMA_PATH, PROJECT_ROOT, load_schema, schema_defaults, validate_config
from src.utils.generate_config_from_schema import generate_default_config
from src.utils.log import log

DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config.yaml"
CONFIG_ENV_VAR = "SMALICOV_CONFIG"


def resolve_config_path(cli_path: Optional[Path] = None) -> Path:
    """`--config` wins over `SMALICOV_CONFIG`, which wins over config.yaml in the project root."""
    if cli_path:
        return Path(cli_path)
    env_path = os.environ.get(CONFIG_ENV_VAR)
    return Path(env_path) if env_path else DEFAULT_CONFIG_PATH


def load_config(config_path: Path = DEFAULT_CONFIG_PATH, schema_path: Path = DEFAULT_SCHEMA_PATH) -> Dict[str, Any]:
    """
    Loads the configuration, generating a default file when it is missing
    and adding missing keys (with schema defaults) to an existing one.

    Args:
        config_path: The configuration YAML file.
        schema_path: The schema the config is checked against.

    Returns:
        The configuration with every schema key present.

    Raises:
        ConfigError: The file is not valid YAML, not a mapping, or has values of the wrong type.
    """
    log(f"Loading configuration from: {config_path}", "DEBUG")
    if not config_path.is_file():
        log(f"Configuration file not found at '{config_path}'. Generating defaults...", "INFO")
        if not generate_default_config(schema_path=schema_path, output_path=config_path):
            log("Falling back to in-memory schema defaults.", "WARNING")
            return schema_defaults(load_schema(schema_path))
    else:
        auto_update_config(config_path=config_path, schema_path=schema_path)

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in configuration file '{config_path}': {e}") from e
    except IOError as e:
        log(traceback.format_exc(), "DEBUG")
        raise ConfigError(f"Cannot read configuration file '{config_path}': {e}") from e
    if not isinstance(config, dict):
        raise ConfigError(f"Configuration file '{config_path}' does not contain a mapping")

    schema = load_schema(schema_path)
    problems = validate_config(config, schema)
    if problems:
        raise ConfigError(f"Invalid configuration in '{config_path}': " + "; ".join(problems))
    config = {**schema_defaults(schema), **config}
    log(f"Configuration loaded from '{config_path}'.", "DEBUG")
    return config
