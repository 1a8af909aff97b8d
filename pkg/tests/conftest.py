import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _ACCEPTANCE[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
