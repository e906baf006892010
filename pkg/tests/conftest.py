"""Shared pytest wiring.

The acceptance tests record one verdict line per criterion; this hook
prints them after the run so the pass/fail ledger is visible even with
output capture active.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    for module_name in ("tests.test_acceptance", "test_acceptance"):
        mod = sys.modules.get(module_name)
        if mod is not None:
            break
    else:
        return
    lines = getattr(mod, "REPORT_LINES", [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
