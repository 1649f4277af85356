import numpy as np
import pytest

from rlvr_lab.env import EnvSpec, TaskSet
from rlvr_lab.policy import PolicyTable


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lock_small():
    return TaskSet.generate(EnvSpec("CombinationLock", 4, 3, seed=7), 3)


@pytest.fixture
def chain_small():
    return TaskSet.generate(EnvSpec("ModularChain", 5, 3, seed=3), 10)


def random_policy(taskset, rng, scale=1.0):
    return PolicyTable(rng.normal(0.0, scale, (taskset.n_states, taskset.spec.vocab_size)), taskset)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
