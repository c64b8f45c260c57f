"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
import re

import pytest

_CRITERIA = {
    1: "schedule conformance",
    2: "forward-process law",
    3: "analytic sampler check",
    4: "gradient correctness",
    5: "geometry oracles",
    6: "hybrid/truncation semantics",
    7: "toy end-to-end ablation",
    8: "overfit regression",
    9: "CLI determinism",
}
_results = {}
_notes = []


@pytest.fixture
def acceptance_note():
    """Lines to show under the criterion summary (measured values)."""
    return _notes.append


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        ok = report.outcome == "passed"
        _results[n] = _results.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        if n in _results:
            status = "PASS" if _results[n] else "FAIL"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {n} ({_CRITERIA[n]}): {status}")
    for line in _notes:
        terminalreporter.write_line(f"  {line}")
