import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    ok, secs = _RESULTS.get(n, (True, 0.0, title))[:2]
    _RESULTS[n] = (ok and rep.passed, secs + rep.duration, title)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, secs, title = _RESULTS[n]
        terminalreporter.write_line(
            f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({secs:.2f}s)")
