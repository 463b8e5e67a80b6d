import numpy as np
import pytest

from camforge.core import precision


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion; detail may be appended."""
    number = request.node.get_closest_marker("criterion").args[0]
    entry = {"detail": [], "ok": False}
    _ACCEPTANCE[number] = entry
    yield entry["detail"]
    entry["ok"] = request.node.rep_call.passed if hasattr(request.node, "rep_call") else False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[number]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {'; '.join(entry['detail'])}")
