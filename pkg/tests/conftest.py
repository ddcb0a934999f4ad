import numpy as np
import pytest

from stefan_maxwell import TransportCoefficients
from stefan_maxwell.mesh import DIRICHLET, build_unit_square, everywhere, tag_boundary

# lines recorded by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def identity_coeffs():
    # with c = (1, 1) this makes M^gamma the 2x2 identity
    return TransportCoefficients.from_pairs(2, {(0, 1): 1.0}, (1.0, 1.0), RT=1.0, gamma=1.0)


@pytest.fixture
def dirichlet_square():
    def make(N):
        return tag_boundary(build_unit_square(N), [(everywhere, DIRICHLET(0))])

    return make


def random_coefficients(rng, n, dmin=0.1, dmax=10.0, mmin=0.5, mmax=2.0, gamma=1.0, RT=1.0):
    D = rng.uniform(dmin, dmax, (n, n))
    D = np.triu(D, 1)
    D = D + D.T
    return TransportCoefficients(D, rng.uniform(mmin, mmax, n), RT=RT, gamma=gamma)
