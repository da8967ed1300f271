import pytest

from cptmp.scenarios import build_scenario, preset


# module scope: a 10^5-path build holds close to a gigabyte, so builds are not kept across modules
@pytest.fixture(scope="module")
def closed_form():
    """Closed-form optimum at 10^5 paths, 200 steps (shared: building it takes seconds)."""
    return build_scenario(preset("closed_form"))


@pytest.fixture(scope="module")
def jz_market():
    return build_scenario(preset("jz_market"))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collect one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
