import numpy as np
import pytest

from bblab.mesh import unit_square_mesh
from bblab.spaces import BDM1Space


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def space4():
    return BDM1Space(unit_square_mesh(4))


@pytest.fixture(scope="session")
def space8():
    return BDM1Space(unit_square_mesh(8))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects (criterion, passed, detail) lines printed at the end of the run."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in lines:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
