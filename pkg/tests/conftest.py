"""Shared fixtures: the reference experiment (headline parameters, a
50k-sample calibrated trace, the solved policy, and the five-controller
simulation suite) is computed once per session."""

import numpy as np
import pytest

from eectl.controllers import (
    AlwaysContinueController,
    AlwaysExitController,
    CcController,
    EaoController,
    OnccController,
    build_cc_predictors,
)
from eectl.energy_env import GOOD, EnergyParams, SystemState
from eectl.mdp import build_model, policy_iteration
from eectl.sim import EpisodeConfig, run_suite
from eectl.trace import GeneratorConfig, generate_synthetic, split


@pytest.fixture(scope="session")
def headline_params():
    """Intermittent source with a 1.28 quanta/slot income rate."""
    return EnergyParams(
        p_stay_good=0.9,
        p_stay_bad=0.6,
        harvest_probs=(0.1, 0.2, 0.7),
        capacity=50,
        cost_exit=1,
        cost_continue=2,
    )


@pytest.fixture(scope="session")
def headline_splits():
    samples = generate_synthetic(50_000, GeneratorConfig(), np.random.default_rng(20317))
    return split(samples, (0.5, 0.25, 0.25), np.random.default_rng(404))


@pytest.fixture(scope="session")
def headline_solution(headline_params, headline_splits):
    model = build_model(headline_params, headline_splits.est, 256)
    return model, policy_iteration(model, SystemState(0, GOOD))


@pytest.fixture(scope="session")
def headline_suite(headline_params, headline_splits, headline_solution):
    _, solution = headline_solution
    params = headline_params
    predictors = build_cc_predictors(solution.policy, headline_splits.nb)
    controllers = [
        AlwaysContinueController(params.cost_exit, params.cost_continue),
        AlwaysExitController(params.cost_exit, params.cost_continue),
        EaoController(params.cost_exit, params.cost_continue),
        OnccController(solution.policy),
        CcController(predictors, params.cost_exit, params.cost_continue),
    ]
    cfg = EpisodeConfig(horizon=10_000, num_episodes=5, seed=11)
    return run_suite(controllers, headline_splits, params, cfg)
