import pytest

_ACCEPTANCE: list = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _ACCEPTANCE.append((number, line))
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE, key=lambda t: t[0]):
            terminalreporter.write_line(line)
