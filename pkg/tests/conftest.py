import re
from collections import defaultdict

CRITERIA = {
    1: "gradient suite",
    2: "descriptor oracles",
    3: "contrastive training",
    4: "registration recovery",
    5: "landscape property",
    6: "metric sanity",
    7: "determinism and round-trip",
}

_outcomes = defaultdict(list)
_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    match = _PATTERN.search(report.nodeid)
    if match is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes[int(match.group(1))].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in CRITERIA.items():
        results = _outcomes.get(number)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {number} ({name}): {status}")
