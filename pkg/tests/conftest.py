import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> "PASS ..." / "FAIL ..." line, filled by test_acceptance
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])
