import numpy as np
import pytest

from ccreg.datamodel import DgpConfig, generate_dataset

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(DgpConfig(n=300, delta=0.65, base_seed=7), 0)


@pytest.fixture(scope="session")
def small_config():
    # small but valid design for fast unit tests
    return DgpConfig(n=120, k=3, ell=4, base_seed=3)


def random_orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return q


def random_low_rank(rng, n, d, r, scale=1.0):
    return scale * rng.standard_normal((n, r)) @ rng.standard_normal((r, d))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
