import numpy as np
import pytest

from lsirm_ns.ns import Domain2D
from lsirm_ns.synth import simulate_thomas

THOMAS_SEED = 777
THOMAS_PARENTS = np.array([(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75), (0.5, 0.5)])
THOMAS_ALPHA = 12.0
THOMAS_OMEGA = 0.05


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_square():
    return Domain2D(0.0, 1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def thomas_truth(unit_square):
    return simulate_thomas(unit_square, THOMAS_ALPHA, THOMAS_OMEGA, THOMAS_SEED, parents=THOMAS_PARENTS)


ACCEPTANCE = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
