import numpy as np
import pytest
from hypothesis import settings

# the first call into a numba kernel compiles it
settings.register_profile("default", deadline=None)
settings.load_profile("default")

from cascade_qoe.blackbox import load_model
from cascade_qoe.experiment import resolve_path

MODEL_NAMES = ("bba", "bola", "client_mpc", "aggressive_bba")


@pytest.fixture(scope="session")
def bundled_models():
    return {n: load_model(resolve_path(f"pkg:models/{n}.json")) for n in MODEL_NAMES}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one pass/fail line per acceptance criterion, printed after the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0][:160] if call.excinfo else ""
    _CRITERIA[mark.args[0]] = (mark.args[1], "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d} {title}: {detail}")
