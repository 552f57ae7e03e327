"""Shared pytest hooks: collect acceptance verdict lines and print them at the end."""

import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record (and print) one ``criterion N: PASS|FAIL`` line."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
