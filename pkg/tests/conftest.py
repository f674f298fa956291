import pytest

_details: dict[int, str] = {}
_outcomes: dict[int, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.fixture
def measured(request):
    """Attach a one-line summary of measured values to the test's criterion."""
    n = request.node.get_closest_marker("criterion").args[0]

    def note(text: str) -> None:
        _details[n] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n = mark.args[0]
    if rep.failed or (rep.when == "call" and rep.passed):
        _outcomes[n] = _outcomes.get(n, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        word = "PASS" if _outcomes[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {word}  {_details.get(n, '')}".rstrip())
