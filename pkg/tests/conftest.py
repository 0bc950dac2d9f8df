from pathlib import Path

import pytest

from powattack.scenario import Scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# filled by test_acceptance; one (criterion, passed, detail) tuple per criterion
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def load(name: str) -> Scenario:
    return Scenario.load(SCENARIOS / f"{name}.json").validate()


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
