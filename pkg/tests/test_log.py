# tests/test_log.py
import logging

from src.utils.log import LOG_FILE_NAME, IconFormatter, SUCCESS_LEVEL_NUM, app_logger, log, setup_logging


def test_success_level_and_icons(captured):
    log("done", "SUCCESS")
    record = captured.records[-1]
    assert record.levelno == SUCCESS_LEVEL_NUM
    assert "✅ done" in IconFormatter().format(record)


def test_unknown_level_is_logged_as_info(captured):
    log("hello", "NOTICE")
    assert captured.records[-1].levelno == logging.INFO
    assert captured.records[-1].getMessage() == "(NOTICE) hello"


def test_file_logging_from_config(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text(f"log_to_file: true\nlog_dir: {tmp_path / 'logs'}\nlog_level: WARNING\n", encoding="utf-8")
    setup_logging(config)
    log("kept", "ERROR")
    log("dropped", "INFO")
    for handler in app_logger.handlers:
        handler.flush()
    content = (tmp_path / "logs" / LOG_FILE_NAME).read_text(encoding="utf-8")
    assert "ERROR - kept" in content
    assert "dropped" not in content
    assert app_logger.level == logging.WARNING


def test_verbose_overrides_configured_level(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text("log_level: ERROR\n", encoding="utf-8")
    setup_logging(config, force_level=logging.DEBUG)
    assert app_logger.level == logging.DEBUG


def test_logging_can_be_disabled(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text("logging_enabled: false\n", encoding="utf-8")
    setup_logging(config)
    assert all(isinstance(h, logging.NullHandler) for h in app_logger.handlers)
