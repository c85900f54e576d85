import numpy as np
import pytest

from kglab.potential import make_builtin
from kglab.tails import TimeGrid, build_tail_table


@pytest.fixture(scope="session")
def example():
    return make_builtin("oscillatory_example", (0.5, 2.0))


@pytest.fixture(scope="session")
def slow_example():
    return make_builtin("oscillatory_example", (0.25, 1.6))


@pytest.fixture(scope="session")
def grid():
    return TimeGrid.log_spaced(0.0, 1e4, 200)


@pytest.fixture(scope="session")
def example_table(example, grid):
    return build_tail_table(example, grid, 1e-10)


@pytest.fixture(scope="session")
def slow_table(slow_example, grid):
    return build_tail_table(slow_example, grid, 1e-10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def example_gauge(example, example_table):
    from kglab.gauge import build_gauge
    return build_gauge(example, example_table, beta=0.5, gamma=2.0)


@pytest.fixture(scope="session")
def scale_invariant_gauge(grid):
    from kglab.gauge import build_gauge
    spec = make_builtin("scale_invariant", (0.4, 1.0))
    table = build_tail_table(spec, grid, 1e-10)
    return build_gauge(spec, table, select_start=False)


# -- acceptance summary ---------------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    measured = dict(item.user_properties).get("measured", "")
    status = "PASS" if rep.passed else "FAIL"
    line = f"[{status}] {number:>2}. {title}"
    if measured:
        line += f": {measured}"
    _ACCEPTANCE[number] = line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
