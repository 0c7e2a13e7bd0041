import numpy as np
import pytest

from ifa import tensor as T


@pytest.fixture(autouse=True)
def float64():
    T.set_precision("float64")
    yield
    T.set_precision("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        item.config._criteria.append((*mark.args, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, detail in sorted(config._criteria):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{verdict}] {number:2d}. {title}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
