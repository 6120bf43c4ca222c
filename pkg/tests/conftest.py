import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aisimpute.linalg import LowRankFactors
from aisimpute.splr import SparseCoo

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_factors(rng, m, n, k, scale=1.0):
    U = np.linalg.qr(rng.standard_normal((m, k)))[0]
    V = np.linalg.qr(rng.standard_normal((n, k)))[0]
    sigma = np.sort(rng.uniform(0.5, 2.0, k))[::-1] * scale
    return LowRankFactors(U, sigma, V)


def random_sparse(rng, m, n, density=0.3):
    nnz = max(1, int(density * m * n))
    idx = np.sort(rng.choice(m * n, size=nnz, replace=False))
    r, c = np.divmod(idx, n)
    return SparseCoo(r, c, rng.standard_normal(nnz), (m, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
