"""Shared test plumbing.

The acceptance tests register one verdict line each; the hook prints
the full checklist at the end of the run so the terminal output always
carries one pass/fail line per criterion, whatever pytest's capture
settings are.
"""

import pytest

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append(f"criterion {number:02d} {name}: {verdict} ({detail})")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="=")
    for line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
