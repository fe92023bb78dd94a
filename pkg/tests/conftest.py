import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sidelinkpos.geometry import ArrayConfig, BandPlan, SignalConfig

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n = mark.args[0]
        ok = rep.outcome == "passed"
        prev = _CRITERIA.get(n, True)
        _CRITERIA[n] = prev and ok


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA, key=str):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if _CRITERIA[n] else 'FAIL'}")


@pytest.fixture
def plan():
    return BandPlan.uniform(5.9e9, 1, 100e6, 32, 120e3)


@pytest.fixture
def signal():
    return SignalConfig()


@pytest.fixture
def ura(plan):
    return ArrayConfig.half_wavelength(4, 2, plan.wavelength)


@pytest.fixture
def ula(plan):
    return ArrayConfig.half_wavelength(4, 1, plan.wavelength)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
