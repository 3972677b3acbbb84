from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from varex.vir import parse_program

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("varex", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("varex")


def load_fixture(name: str):
    return parse_program((FIXTURES / f"{name}.vasm").read_text())


@pytest.fixture
def fixture_program():
    return load_fixture


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
