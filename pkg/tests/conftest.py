from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import settings

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# filled by tests/test_acceptance.py, one entry per criterion
ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE.values():
        terminalreporter.write_line(line)
