"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        prev = _RESULTS.get(n)
        ok = not failed and (prev is None or prev[1])
        details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
        _RESULTS[n] = (title, ok, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, details = _RESULTS[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}"
        if details:
            line += f" ({details})"
        terminalreporter.write_line(line)
