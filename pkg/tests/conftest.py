import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# criterion number -> (title, [passed, ...]) filled by the acceptance tests
ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, title = mark.args
        ACCEPTANCE.setdefault(n, (title, []))[1].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, results = ACCEPTANCE[n]
        status = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Reproducible property runs: fixed example order, no per-example deadline on a slow CPU.
settings.register_profile("repo", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("repo")
