import sys
from pathlib import Path

import pytest

from oraclesim import querylex

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "oraclesim" / "data"
SCENARIOS = DATA_DIR / "scenarios"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def lexicon():
    return querylex.load_lexicon(DATA_DIR)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
