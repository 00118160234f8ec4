import numpy as np
import pytest

from impheat.mesh import DomainSpec, Region, build_mesh
from impheat.operators import assemble, control_map
from impheat.spectral import eigensolve


def make_system(n=200, length=1.0):
    op = assemble(build_mesh(DomainSpec.interval(length, n)))
    return op, eigensolve(op)


@pytest.fixture(scope="session")
def line200():
    return make_system(200)


@pytest.fixture(scope="session")
def line400():
    return make_system(400)


@pytest.fixture(scope="session")
def line40():
    return make_system(40)


@pytest.fixture(scope="session")
def square16():
    op = assemble(build_mesh(DomainSpec.rectangle(1.0, 1.0, 16, 16)))
    return op, eigensolve(op)


@pytest.fixture(scope="session")
def omega_mid(line200):
    op, _ = line200
    return control_map(op, Region.interval(0.3, 0.7))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
