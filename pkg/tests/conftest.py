# tests/conftest.py
import logging
from pathlib import Path

import pytest

from src.instrumenter import Granularity, InstrumentationConfig
from src.smali_parser import load_app
from src.utils.log import app_logger, reset_logging

CORPUS = Path(__file__).resolve().parent / "corpus"
FIXTURE_APP = CORPUS / "fixture_app"
COMPONENTS_APP = CORPUS / "components_app"
EDGE_APP = CORPUS / "edge_app"
LIB_APP = CORPUS / "lib_app"


@pytest.fixture(autouse=True)
def _isolated_logging():
    reset_logging()
    app_logger.propagate = True
    yield
    reset_logging()
    app_logger.propagate = True


@pytest.fixture
def captured(caplog):
    """caplog wired to the SmaliCov logger even after setup_logging turned propagation off."""
    caplog.set_level(logging.DEBUG, logger=app_logger.name)
    app_logger.addHandler(caplog.handler)
    yield caplog
    app_logger.removeHandler(caplog.handler)


def all_config(**overrides) -> InstrumentationConfig:
    return InstrumentationConfig(granularities=frozenset(Granularity), **overrides)


@pytest.fixture(scope="session")
def fixture_app():
    return load_app(FIXTURE_APP / "smali", workers=2, name="fixture_app")


@pytest.fixture(scope="session")
def components_app():
    return load_app(COMPONENTS_APP / "smali", workers=2, name="components_app")


@pytest.fixture(scope="session")
def edge_app():
    return load_app(EDGE_APP / "smali", workers=2, name="edge_app")


@pytest.fixture(scope="session")
def lib_app():
    return load_app(LIB_APP / "smali", workers=2, name="lib_app")
