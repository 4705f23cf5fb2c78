import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ddinfo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ddinfo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance reporting: one line per criterion, printed after the run

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(label, title): acceptance criterion being checked")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if not rep.passed and call.excinfo is not None:
            detail = call.excinfo.exconly().splitlines()[0][:160]
        _ACCEPTANCE[mark.args[0]] = (mark.args[1], rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (int(s.rstrip("ab")), s)):
        title, outcome, detail = _ACCEPTANCE[label]
        verdict = "PASS" if outcome == "passed" else outcome.upper()
        tr.write_line(f"criterion {label:<3} {verdict:<6} {title}: {detail}")
