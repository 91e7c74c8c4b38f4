"""Shared pytest configuration.

The terminal summary repeats one PASS/FAIL line per acceptance criterion so
the gate's outcome is readable without scrolling through the full log.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if getattr(rep, "when", "") not in ("call", "setup"):
                continue
            name = nodeid.split("::")[-1]
            rows[name] = rows.get(name, True) and outcome == "passed"
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name in sorted(rows):
            status = "PASS" if rows[name] else "FAIL"
            terminalreporter.write_line(f"{name}: {status}")
