"""Shared pytest plumbing: acceptance criteria report one PASS/FAIL line each."""

import pytest

CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    CRITERIA[number] = (title, bool(passed), detail)
    print(f"\nCRITERION {number} {'PASS' if passed else 'FAIL'}: {title}: {detail}")


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"CRITERION {number} {'PASS' if passed else 'FAIL'}: {title}: {detail}")
