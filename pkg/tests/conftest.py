"""Print one PASS/FAIL line per acceptance criterion at the end of the run."""
_RESULTS: dict[int, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): test implements the named acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark:
            item.user_properties.append(("acceptance", mark.args[0]))


def pytest_runtest_logreport(report):
    names = [value for key, value in report.user_properties if key == "acceptance"]
    if not names or (report.when != "call" and not report.failed):
        return
    n = int(names[0].removeprefix("AC"))
    _RESULTS[n] = _RESULTS.get(n, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(f"AC{n} {'PASS' if _RESULTS[n] else 'FAIL'}")
