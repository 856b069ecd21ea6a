# src/utils/log.py

import datetime
import logging
import logging.handlers
import sys
from pathlib import Path
from typing import Optional

import yaml

# --- Constants ---
PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent  # src/utils/log.py -> project root

DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config.yaml"
LOGGER_NAME = "SmaliCov"
LOG_DIR_NAME = "logs"
LOG_FILE_NAME = "smalicov.log"  # Base name, rotation adds date
LOG_FORMAT_FILE = "%(asctime)s - %(levelname)s - %(message)s"
LOG_FORMAT_CONSOLE = "%(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

SUCCESS_LEVEL_NUM = 25
logging.addLevelName(SUCCESS_LEVEL_NUM, "SUCCESS")


class IconFormatter(logging.Formatter):
    """Console formatter: `[HH:MM:SS] <icon> message`."""
    LEVEL_ICONS = {
        logging.DEBUG: "🐞",
        logging.INFO: "ℹ️",
        SUCCESS_LEVEL_NUM: "✅",
        logging.WARNING: "⚠️",
        logging.ERROR: "❌",
        logging.CRITICAL: "🔥",
    }
    converter = datetime.datetime.fromtimestamp

    def formatTime(self, record, datefmt=None):
        return self.converter(record.created).strftime("[%H:%M:%S]")

    def format(self, record):
        icon = self.LEVEL_ICONS.get(record.levelno, "➡️")
        return f"{self.formatTime(record)} {icon} {record.getMessage()}"


app_logger = logging.getLogger(LOGGER_NAME)
_handlers_configured = False


def _read_logging_settings(config_path: Path, level: int) -> dict:
    settings = {"enabled": True, "level": level, "backup_count": 7, "to_file": False,
                "log_dir": PROJECT_ROOT / LOG_DIR_NAME}
    if not config_path.is_file():
        return settings
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}
    except Exception as e:
        print(f"[Log Setup Error] Failed to read log settings from '{config_path}': {e}", file=sys.stderr)
        return settings

    settings["enabled"] = bool(config.get("logging_enabled", True))
    parsed_level = logging.getLevelName(str(config.get("log_level", logging.getLevelName(level))).upper())
    if isinstance(parsed_level, int):
        settings["level"] = parsed_level
    else:
        print(f"[Log Setup Warning] Invalid log_level '{config.get('log_level')}' in config, "
              f"using {logging.getLevelName(level)}.", file=sys.stderr)
    backup_count = config.get("log_backup_count", 7)
    if isinstance(backup_count, int) and backup_count >= 0:
        settings["backup_count"] = backup_count
    settings["to_file"] = bool(config.get("log_to_file", False))
    if config.get("log_dir"):
        log_dir = Path(config["log_dir"])
        settings["log_dir"] = log_dir if log_dir.is_absolute() else PROJECT_ROOT / log_dir
    return settings


def setup_logging(config_path: Path = DEFAULT_CONFIG_PATH, level: int = logging.INFO,
                  force_level: Optional[int] = None):
    """
    Configures the 'SmaliCov' logger from the config file: console output on
    stderr (stdout carries reports) and an optional daily-rotating log file.
    Call once at startup; later calls are ignored.

    Args:
        config_path: Path to the configuration YAML file.
        level: Level used when the config does not set one.
        force_level: Overrides the configured level (e.g. `--verbose`).
    """
    global _handlers_configured
    if _handlers_configured:
        return

    settings = _read_logging_settings(Path(config_path), level)
    effective_level = force_level if force_level is not None else settings["level"]
    app_logger.setLevel(effective_level)
    app_logger.propagate = False

    if not settings["enabled"]:
        app_logger.addHandler(logging.NullHandler())
        _handlers_configured = True
        return

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(IconFormatter(fmt=LOG_FORMAT_CONSOLE))
    console_handler.setLevel(effective_level)
    app_logger.addHandler(console_handler)

    if settings["to_file"]:
        log_file_path = settings["log_dir"] / LOG_FILE_NAME
        try:
            settings["log_dir"].mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.TimedRotatingFileHandler(
                log_file_path, when="midnight", interval=1,
                backupCount=settings["backup_count"], encoding="utf-8",
            )
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT_FILE, datefmt=LOG_DATE_FORMAT))
            file_handler.setLevel(effective_level)
            app_logger.addHandler(file_handler)
        except Exception as e:
            print(f"[Log Setup Error] Failed to create file handler for '{log_file_path}': {e}", file=sys.stderr)

    _handlers_configured = True
    log(f"Logging enabled. Level: {logging.getLevelName(effective_level)}.", "DEBUG")


def reset_logging():
    """Removes configured handlers so setup_logging can run again (tests, repeated CLI runs)."""
    global _handlers_configured
    for handler in list(app_logger.handlers):
        app_logger.removeHandler(handler)
        handler.close()
    _handlers_configured = False


def log(message: str, level: str = "INFO"):
    """
    Logs a message through the 'SmaliCov' logger.

    Args:
        message: The message string to log.
        level: 'DEBUG', 'INFO', 'SUCCESS', 'WARNING', 'ERROR' or 'CRITICAL' (case-insensitive).
    """
    level_upper = level.upper()
    if level_upper == "DEBUG":
        app_logger.debug(message)
    elif level_upper == "SUCCESS":
        app_logger.log(SUCCESS_LEVEL_NUM, message)
    elif level_upper == "WARNING":
        app_logger.warning(message)
    elif level_upper == "ERROR":
        app_logger.error(message)
    elif level_upper == "CRITICAL":
        app_logger.critical(message)
    else:
        prefix = f"({level}) " if level_upper != "INFO" else ""
        app_logger.info(f"{prefix}{message}")
