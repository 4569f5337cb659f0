import os

import pytest

FAST = os.environ.get("CODEDFJ_ACCEPTANCE_FAST", "") not in ("", "0")

_REPORT: list[str] = []


@pytest.fixture
def report():
    """Collects one summary line per acceptance criterion."""
    def add(name: str, ok: bool, detail: str = "") -> bool:
        _REPORT.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
        print(_REPORT[-1])
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
