import pytest

# (criterion id, passed, summary) lines filled in by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, summary in sorted(ACCEPTANCE_LINES, key=lambda r: int(r[0][1:])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {cid}: {summary}")
