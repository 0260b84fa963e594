"""Per-criterion summary for the acceptance suite.

Tests tagged ``@pytest.mark.criterion(n)`` are grouped by ``n``; a criterion
passes only when every test under it passes.  Tests may attach a detail
string with ``record_property("detail", ...)``.
"""

from collections import OrderedDict

import pytest

_RESULTS = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _RESULTS.setdefault(mark.args[0], []).append((item.name, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        ok = all(p for _, p, _ in parts)
        notes = "; ".join(f"{name}: {'ok' if p else 'FAILED'}{' (' + d + ')' if d else ''}"
                          for name, p, d in parts)
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {notes}")
