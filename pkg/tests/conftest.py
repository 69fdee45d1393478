import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    key = marker.args[0]
    if report.failed or (report.when == "call" and key not in _CRITERIA):
        _CRITERIA[key] = (not report.failed, marker.args[1], report.longreprtext.splitlines()[-1:] if report.failed else [])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[key]
        line = f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail[0].strip()})"
        terminalreporter.write_line(line)
