"""Collects one pass/fail line per acceptance criterion and prints them after the run."""

_LINES = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        label = props.get("criterion", report.nodeid.split("::")[-1])
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        detail = props.get("detail", "")
        _LINES.append(f"{status}  {label}" + (f"  [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
