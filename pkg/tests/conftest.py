import os
import sys
from collections import OrderedDict

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_RESULTS: "OrderedDict[int, list[tuple[str, str]]]" = OrderedDict()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _RESULTS.setdefault(int(marker.args[0]), []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_RESULTS):
        parts = _RESULTS[crit]
        ok = all(s == "PASS" for _, s in parts)
        detail = ", ".join(f"{name}={s}" for name, s in parts)
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  ({detail})")
