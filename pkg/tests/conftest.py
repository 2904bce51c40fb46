import numpy as np
import pytest

from srtd_lab import datastore, envsuite
from srtd_lab.taskdecomp import TrainingConfig, train_joint

_trained = {}


@pytest.fixture(scope="session")
def suite3():
    return envsuite.make_suite(3, seed=0)


@pytest.fixture(scope="session")
def small_dataset(suite3):
    mix = datastore.MixConfig.from_counts(1, 1, 1, seed=0, episodes={"MR": 6, "RP": 4, "ME": 2})
    return datastore.relabel_returns(datastore.generate_dataset(suite3, mix))


def trained_models(seed=0):
    """Joint embedding run on the default 3-task mixed dataset (5k steps), cached per seed."""
    if seed not in _trained:
        suite = envsuite.make_suite(3, seed=seed)
        mix = datastore.MixConfig.from_counts(1, 1, 1, seed=seed)
        ds = datastore.relabel_returns(datastore.generate_dataset(suite, mix))
        _trained[seed] = (suite, ds, train_joint(ds, TrainingConfig(seed=seed)))
    return _trained[seed]


@pytest.fixture(scope="session")
def trained():
    return trained_models(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_mr = {}


def mr_models(seed=0):
    """Joint embedding run on an all-MR 3-task dataset, cached per seed."""
    if seed not in _mr:
        suite = envsuite.make_suite(3, seed=seed)
        ds = datastore.relabel_returns(datastore.generate_dataset(suite, datastore.MixConfig.from_counts(3, 0, 0, seed=seed)))
        _mr[seed] = (suite, ds, train_joint(ds, TrainingConfig(seed=seed)))
    return _mr[seed]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
