import numpy as np
import pytest
import scipy.sparse as sp

from rlcg.sparsela import CsrMatrix


def random_spd(n, seed, density=0.2, shift=1.0):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    A = (B @ B.T).toarray()
    A = np.triu(A) + np.triu(A, 1).T + shift * np.eye(n)
    return CsrMatrix.from_dense(A)


@pytest.fixture
def spd_factory():
    return random_spd


# filled by the acceptance suite, echoed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
