import pytest

_outcomes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    failed = report.failed or _outcomes.get(label) == "FAIL"
    if report.when == "call" or failed:
        _outcomes[label] = "FAIL" if failed else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_outcomes, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(f"[{_outcomes[label]}] {label}")
