import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "results table, Spec refined by Impl",
    2: "results table, Impl refined by Spec",
    3: "preamble checks",
    4: "renaming transformation equivalence",
    5: "oracle equivalence",
    6: "textbook cases",
    7: "property suites",
    8: "parser round trip and fuzzing",
}

_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or rep.failed:
        ok = _outcomes.get(n, True) and not rep.failed
        _outcomes[n] = ok and not rep.skipped


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        verdict = "PASS" if _outcomes[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n} {verdict}  {CRITERIA.get(n, '')}")
