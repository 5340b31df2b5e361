"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import pytest

_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        _results.append((str(marker.args[0]), marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_results, key=lambda r: int(r[0])):
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(f"{line} :: {detail}" if detail else line)
