"""Shared fixtures for the concord test suite."""

import numpy as np
import pytest

from concord_env import ONE_SHOT, TWO_STAGE, Strategy, make_convention_game
from concord_graph import PayoffMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def one_shot():
    return make_convention_game([10, 8, 6], 0.0, ONE_SHOT)


@pytest.fixture
def two_stage():
    return make_convention_game([10, 8, 6], 0.0, TWO_STAGE)


def pure(action, size=3, strategy_id=0, response=False):
    vector = np.zeros(size)
    vector[action] = 1.0
    table = np.tile(vector, (size, 1)) if response else None
    return Strategy(strategy_id, vector, table)


def random_payoff(rng, n, symmetric=False, low=0.0, high=1.0):
    entries = rng.uniform(low, high, size=(n, n))
    if symmetric:
        entries = (entries + entries.T) / 2.0
    return PayoffMatrix(entries, symmetric=symmetric)
