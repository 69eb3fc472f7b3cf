import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Append a one-line verdict for the acceptance summary."""

    def rec(num: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

    return rec


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
        terminalreporter.write_line(line)
