"""Shared fixtures: the default scenario is solved once per session."""
import numpy as np
import pytest

from pushmdp.cli import DEFAULTS, build_scenario
from pushmdp.model import stage_cost_table
from pushmdp.policies import non_push_optimal, unicast_priority_table
from pushmdp.solver import policy_iteration
from pushmdp.transition import ArrivalPmf, build_kernel


def make_scenario(**overrides):
    """(params, radio, grid, popularity) for defaults plus overrides."""
    settings = dict(DEFAULTS)
    for key, value in overrides.items():
        if key not in settings:
            raise KeyError(key)
        settings[key] = value
    return build_scenario(settings)


def make_instance(**overrides):
    """Scenario plus built kernel and stage costs."""
    params, radio, grid, popularity = make_scenario(**overrides)
    arrival = ArrivalPmf.poisson(params.mean_arrival, params.battery_levels)
    kernel = build_kernel(params, grid, popularity, arrival)
    costs = stage_cost_table(params)
    return params, radio, grid, popularity, kernel, costs


@pytest.fixture(scope="session")
def default_scenario():
    return make_scenario()


@pytest.fixture(scope="session")
def default_instance():
    return make_instance()


@pytest.fixture(scope="session")
def default_solution(default_instance):
    _, _, _, _, kernel, costs = default_instance
    return policy_iteration(kernel, costs)


@pytest.fixture(scope="session")
def default_nonpush(default_instance):
    _, _, _, _, kernel, costs = default_instance
    return non_push_optimal(kernel, costs)


@pytest.fixture(scope="session")
def default_greedy(default_instance):
    params, _, grid, _, _, _ = default_instance
    return unicast_priority_table(params, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
