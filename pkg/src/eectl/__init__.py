"""Energy-aware early-exit inference control for energy-harvesting edge
devices: threshold-policy optimization over an average-reward MDP, a
causal naive-Bayes controller that imitates it, and a reproducible
simulator with service-rate/accuracy metrics."""

from eectl.energy_env import (
    BAD,
    GOOD,
    EnergyParams,
    HarvestOutcome,
    SystemState,
    average_energy_rate,
    steady_state_good,
    step_battery,
    step_source,
)
from eectl.trace import (
    ConfidenceSample,
    GapDistribution,
    GeneratorConfig,
    TraceSplits,
    build_gap_distribution,
    generate_synthetic,
    ingest_csv,
    split,
    temperature_scale,
)
from eectl.mdp import (
    MdpModel,
    PiSolution,
    ThresholdPolicy,
    brute_force_oracle,
    build_model,
    policy_iteration,
    reward_estimate,
    threshold_exchange_check,
)
from eectl.controllers import (
    Action,
    AlwaysContinueController,
    AlwaysExitController,
    CcController,
    EaoController,
    ExitPredictor,
    OnccController,
    build_cc_predictors,
    fit_exit_predictor,
    predict_exit_prob,
)
from eectl.sim import (
    AggregateResult,
    EpisodeConfig,
    EpisodeResult,
    cumulative_energy_series,
    run_episode,
    run_suite,
)
from eectl.config import ExperimentConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AggregateResult",
    "AlwaysContinueController",
    "AlwaysExitController",
    "BAD",
    "CcController",
    "ConfidenceSample",
    "EaoController",
    "EnergyParams",
    "EpisodeConfig",
    "EpisodeResult",
    "ExitPredictor",
    "ExperimentConfig",
    "GOOD",
    "GapDistribution",
    "GeneratorConfig",
    "HarvestOutcome",
    "MdpModel",
    "OnccController",
    "PiSolution",
    "SystemState",
    "ThresholdPolicy",
    "TraceSplits",
    "average_energy_rate",
    "brute_force_oracle",
    "build_cc_predictors",
    "build_gap_distribution",
    "build_model",
    "cumulative_energy_series",
    "fit_exit_predictor",
    "generate_synthetic",
    "ingest_csv",
    "load_config",
    "policy_iteration",
    "predict_exit_prob",
    "reward_estimate",
    "run_episode",
    "run_suite",
    "split",
    "steady_state_good",
    "step_battery",
    "step_source",
    "temperature_scale",
    "threshold_exchange_check",
]
