import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    _RESULTS[props["criterion"]] = (report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        outcome, detail = _RESULTS[k]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {k:>2}: {status}  {detail}")


@pytest.fixture
def criterion(request, record_property):
    """Tag a test with its criterion number; call the result to attach a detail string."""
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])

    def detail(text):
        request.node.user_properties[:] = [p for p in request.node.user_properties if p[0] != "detail"]
        record_property("detail", text)
        print(f"criterion {marker.args[0]}: {text}")

    return detail
