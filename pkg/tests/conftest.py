"""Shared pytest plumbing.

test_acceptance.py records one verdict line per criterion; the terminal
summary hook replays them after the run so the verdicts stay visible even
with output capture enabled.
"""

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
