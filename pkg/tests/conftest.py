from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "selfdecoherence" / "scenarios"


@pytest.fixture
def scenarios() -> Path:
    return SCENARIOS


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    def _record(number: int, passed: bool, text: str) -> None:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {text}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
