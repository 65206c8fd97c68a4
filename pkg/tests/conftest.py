import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csdwave.manifold import critical_manifold
from csdwave.params import DEFAULT

settings.register_profile("csdwave", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("csdwave")

# Reference equilibria of the reduced system (x, y, z).
REFERENCE_EQUILIBRIA = {
    "p_l1": (-67.353771012452825, -63.416145863486385, 10.966529992012319),
    "p_l2": (-57.045796241401931, -55.561014704831557, 15.351285610517010),
    "p_r": (35.198894535488229, 11.631018842324311, 208.7014642903386),
}


@pytest.fixture(scope="session")
def p():
    return DEFAULT


@pytest.fixture(scope="session")
def cm():
    return critical_manifold(DEFAULT)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
