"""Decision policies behind one ``decide(state, sample, rng)`` interface.

Five controllers: the threshold rule with full knowledge of the final
confidence (upper-bound reference), its causal naive-Bayes imitation,
the accuracy-greedy oracle that ignores energy, and the two static
baselines (always exit / always continue).
"""

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from eectl.energy_env import EnergyParams, SystemState
from eectl.mdp import ThresholdPolicy

VARIANCE_FLOOR = 1e-6

PREDICTOR_HEADER = ("gamma", "prior1", "mu0", "var0", "mu1", "var1")


class Action(Enum):
    DISCARD = "discard"
    EXIT_EARLY = "exit_early"
    CONTINUE_FULL = "continue_full"
    FREE_GUESS = "free_guess"  # zero-cost random guess, emitted only by the oracle controller


def action_cost(action: Action, params: EnergyParams) -> int:
    if action is Action.EXIT_EARLY:
        return params.cost_exit
    if action is Action.CONTINUE_FULL:
        return params.cost_continue
    return 0


def oncc_decide(state: SystemState, conf_early: float, conf_final: float, policy: ThresholdPolicy) -> Action:
    """Threshold rule that reads the final confidence before paying for it:
    exit when the confidence gap is within the state's threshold."""
    if state.battery < policy.cost_exit:
        return Action.DISCARD
    if state.battery < policy.cost_continue:
        return Action.EXIT_EARLY
    if conf_early + policy.thresholds[state] >= conf_final:
        return Action.EXIT_EARLY
    return Action.CONTINUE_FULL


@dataclass(frozen=True)
class ExitPredictor:
    """Gaussian naive Bayes over the early confidence for the binary
    exit-vs-continue target induced by one threshold. A prior of exactly
    0 or 1 marks a degenerate single-class fit with a constant posterior.
    """

    prior_exit: float
    mean_continue: float
    var_continue: float
    mean_exit: float
    var_exit: float


def fit_exit_predictor(samples: list, threshold: float) -> ExitPredictor:
    """Label each sample as exit iff its gap is within the threshold, then
    fit an add-one-smoothed prior and per-class Gaussian moments of the
    early confidence. Single-class labelings yield a constant predictor
    rather than an error; variances are floored to stay usable.
    """
    if not samples:
        raise ValueError("no samples")
    conf = np.array([s.conf_early for s in samples])
    is_exit = np.array([s.gap <= threshold for s in samples])
    n = conf.size
    n_exit = int(is_exit.sum())
    overall_mean = float(conf.mean())
    overall_var = max(float(conf.var()), VARIANCE_FLOOR)
    if n_exit == 0:
        return ExitPredictor(0.0, overall_mean, overall_var, overall_mean, overall_var)
    if n_exit == n:
        return ExitPredictor(1.0, overall_mean, overall_var, overall_mean, overall_var)
    prior = (n_exit + 1.0) / (n + 2.0)
    exit_conf = conf[is_exit]
    cont_conf = conf[~is_exit]
    return ExitPredictor(
        prior,
        float(cont_conf.mean()),
        max(float(cont_conf.var()), VARIANCE_FLOOR),
        float(exit_conf.mean()),
        max(float(exit_conf.var()), VARIANCE_FLOOR),
    )


def _gaussian_loglik(x: float, mean: float, var: float) -> float:
    return -0.5 * (math.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def predict_exit_prob(pred: ExitPredictor, conf_early: float) -> float:
    """Posterior probability of the exit class at the given early confidence."""
    if pred.prior_exit <= 0.0:
        return 0.0
    if pred.prior_exit >= 1.0:
        return 1.0
    log_odds = (
        math.log(pred.prior_exit)
        - math.log1p(-pred.prior_exit)
        + _gaussian_loglik(conf_early, pred.mean_exit, pred.var_exit)
        - _gaussian_loglik(conf_early, pred.mean_continue, pred.var_continue)
    )
    if log_odds >= 0.0:
        return 1.0 / (1.0 + math.exp(-log_odds))
    odds = math.exp(log_odds)
    return odds / (1.0 + odds)


def cc_decide(
    state: SystemState,
    conf_early: float,
    predictors: dict,
    rng: np.random.Generator,
    cost_exit: int,
    cost_continue: int,
) -> Action:
    """Causal rule: forced bands as usual, otherwise exit with the
    predictor's posterior probability. Never sees the final confidence;
    forced decisions consume no random draw."""
    if state.battery < cost_exit:
        return Action.DISCARD
    if state.battery < cost_continue:
        return Action.EXIT_EARLY
    p = predict_exit_prob(predictors[state], conf_early)
    return Action.EXIT_EARLY if rng.random() < p else Action.CONTINUE_FULL


def eao_decide(state: SystemState, sample, cost_exit: int, cost_continue: int) -> Action:
    """Accuracy-greedy oracle: exit when the early head is right, continue
    when only the final head is right and affordable, otherwise guess for
    free."""
    if state.battery < cost_exit:
        return Action.DISCARD
    if sample.correct_early:
        return Action.EXIT_EARLY
    if sample.correct_final and state.battery >= cost_continue:
        return Action.CONTINUE_FULL
    return Action.FREE_GUESS


def baseline_decide(
    kind: str,
    state: SystemState,
    cost_exit: int,
    cost_continue: int,
    exit_fallback: bool = False,
) -> Action:
    """Static baselines. Always-continue discards when it cannot afford the
    full model unless the fallback variant is requested."""
    if kind == "always_exit":
        return Action.EXIT_EARLY if state.battery >= cost_exit else Action.DISCARD
    if kind == "always_continue":
        if state.battery >= cost_continue:
            return Action.CONTINUE_FULL
        if exit_fallback and state.battery >= cost_exit:
            return Action.EXIT_EARLY
        return Action.DISCARD
    raise ValueError(f"unknown baseline {kind!r}")


class OnccController:
    """Reads the final confidence before deciding; an upper-bound reference."""

    name = "oncc"

    def __init__(self, policy: ThresholdPolicy):
        self.policy = policy

    def decide(self, state, sample, rng) -> Action:
        return oncc_decide(state, sample.conf_early, sample.conf_final, self.policy)


class CcController:
    """Deployable controller driven by the fitted exit predictors."""

    name = "cc"

    def __init__(self, predictors: dict, cost_exit: int, cost_continue: int):
        self.predictors = predictors
        self.cost_exit = cost_exit
        self.cost_continue = cost_continue

    def decide(self, state, sample, rng) -> Action:
        return cc_decide(
            state, sample.conf_early, self.predictors, rng, self.cost_exit, self.cost_continue
        )


class EaoController:
    """Knows correctness of both heads; greedy for accuracy, blind to energy."""

    name = "eao"

    def __init__(self, cost_exit: int, cost_continue: int):
        self.cost_exit = cost_exit
        self.cost_continue = cost_continue

    def decide(self, state, sample, rng) -> Action:
        return eao_decide(state, sample, self.cost_exit, self.cost_continue)


class AlwaysExitController:
    name = "always_exit"

    def __init__(self, cost_exit: int, cost_continue: int):
        self.cost_exit = cost_exit
        self.cost_continue = cost_continue

    def decide(self, state, sample, rng) -> Action:
        return baseline_decide("always_exit", state, self.cost_exit, self.cost_continue)


class AlwaysContinueController:
    name = "always_continue"

    def __init__(self, cost_exit: int, cost_continue: int, exit_fallback: bool = False):
        self.cost_exit = cost_exit
        self.cost_continue = cost_continue
        self.exit_fallback = exit_fallback

    def decide(self, state, sample, rng) -> Action:
        return baseline_decide(
            "always_continue", state, self.cost_exit, self.cost_continue, self.exit_fallback
        )


def build_cc_predictors(policy: ThresholdPolicy, nb_samples: list) -> dict:
    """Per-state predictor map; states sharing a threshold share one fit."""
    fits: dict[float, ExitPredictor] = {}
    predictors: dict[SystemState, ExitPredictor] = {}
    for state, threshold in policy.thresholds.items():
        if threshold not in fits:
            fits[threshold] = fit_exit_predictor(nb_samples, threshold)
        predictors[state] = fits[threshold]
    return predictors


def write_predictor_csv(path, fits: dict) -> None:
    """Serialize predictors keyed by threshold, one row per distinct threshold."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(PREDICTOR_HEADER) + "\n")
        for threshold in sorted(fits):
            p = fits[threshold]
            fh.write(
                f"{threshold:.17g},{p.prior_exit:.17g},{p.mean_continue:.17g},"
                f"{p.var_continue:.17g},{p.mean_exit:.17g},{p.var_exit:.17g}\n"
            )


def read_predictor_csv(path) -> dict:
    fits: dict[float, ExitPredictor] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(PREDICTOR_HEADER):
            raise ValueError(f"{path}: expected header {','.join(PREDICTOR_HEADER)}")
        for row in reader:
            values = [float(v) for v in row]
            fits[values[0]] = ExitPredictor(values[1], values[2], values[3], values[4], values[5])
    return fits


def predictors_from_table(policy: ThresholdPolicy, fits: dict, tol: float = 1e-9) -> dict:
    """Match serialized predictors to a policy's per-state thresholds."""
    predictors: dict[SystemState, ExitPredictor] = {}
    available = sorted(fits)
    for state, threshold in policy.thresholds.items():
        match = min(available, key=lambda g: abs(g - threshold), default=None)
        if match is None or abs(match - threshold) > tol:
            raise KeyError(f"no predictor fitted for threshold {threshold}")
        predictors[state] = fits[match]
    return predictors
