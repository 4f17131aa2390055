import math

import numpy as np
import pytest

from prefixlqg.control import PlantModel
from prefixlqg.rdf import solve_rdf

# Reference scalar instance: a=2, b=1, w=q=r=1, X0=1, gamma = S W + 0.1 Theta.
REF1_GAMMA = 5.6068884
REF1_RATE = 0.5 * math.log2(14.0)


def ref1_plant(gamma=REF1_GAMMA):
    return PlantModel.scalar(2.0, 1.0, 1.0, 1.0, 1.0, gamma)


@pytest.fixture(scope="session")
def ref1():
    plant = ref1_plant()
    return plant, solve_rdf(plant)


@pytest.fixture(scope="session")
def ref1_invariant(ref1):
    from prefixlqg.invariant import InvariantCodec

    return InvariantCodec.from_solution(ref1[1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log(request):
    lines = request.config.stash.setdefault(_LOG_KEY, [])
    return lines


_LOG_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LOG_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
