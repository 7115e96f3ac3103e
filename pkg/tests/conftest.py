import numpy as np
import pytest

from fennet.manifold import TuckerPoint
from fennet.simulation import generate_core, random_orthonormal_factor


def random_point(m, s, L, K, N, seed=0):
    rng = np.random.default_rng(seed)
    return TuckerPoint(generate_core(s, K, N, rng), random_orthonormal_factor(m, s, rng),
                       random_orthonormal_factor(L, K, rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_point():
    return random_point(4, 2, 6, 3, 2, seed=7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
