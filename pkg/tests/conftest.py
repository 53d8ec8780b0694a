import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict = {}


def pytest_runtest_logreport(report):
    for key, value in report.user_properties:
        if key == "criterion" and report.when == "call":
            _criteria[value] = (report.outcome.upper(), dict(report.user_properties).get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        outcome, detail = _criteria[num]
        status = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status}  {detail}")
