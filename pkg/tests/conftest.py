"""Shared fixtures and the acceptance summary printer."""

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from critlab import ManifoldModel

settings.register_profile("critlab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("critlab")

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        number, title = mark.args
        _RESULTS.append((number, title, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, passed, detail in sorted(_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def s3():
    return ManifoldModel.sphere(3)


@pytest.fixture(scope="session")
def s4():
    return ManifoldModel.sphere(4)


@pytest.fixture(scope="session")
def t3_small():
    return ManifoldModel.torus(3, nodes=16)


@pytest.fixture
def rng():
    return np.random.default_rng(int(os.environ.get("CRITLAB_TEST_SEED", "1234")))
