import numpy as np
import pytest

from latentfolio.synthetic import planted_block_panel

_RESULTS: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = rep.failed
    passed = rep.when == "call" and rep.passed
    prev = _RESULTS.get(number, (None, title))[0]
    if failed:
        _RESULTS[number] = ("FAIL", title)
    elif passed and prev != "FAIL":
        _RESULTS[number] = ("PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def planted4():
    return planted_block_panel(d=12, T=750, k=4, seed=3)
