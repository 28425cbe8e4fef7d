import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line pass/fail summary for an acceptance criterion."""

    def record(label: str, ok: bool, detail: str) -> bool:
        VERDICTS.append(f"{label} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda v: int(v.split()[0][1:])):
            terminalreporter.write_line(line)
