import numpy as np
import pytest

from lddr.instance import generate_instance
from lddr.process import ProcessParams, sample_paths
from lddr.verify import oracle_instance


@pytest.fixture(scope="session")
def oracle():
    """Three-stage, one-product tree with four leaves and its instance."""
    return oracle_instance()


@pytest.fixture(scope="session")
def small_inst():
    return generate_instance(3, 2, seed=3)


@pytest.fixture(scope="session")
def small_paths(small_inst):
    return sample_paths(small_inst.process, 6, ("test", 0))


@pytest.fixture
def flat_process():
    return ProcessParams(0.6, 0.2, np.full((4, 3), 100.0), seed=0)


def pytest_terminal_summary(terminalreporter):
    from helpers import CRITERIA_LINES

    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
