"""Episode simulator and metric aggregation for controller-environment runs.

Metrics per episode: service rate tau (fraction of slots with a
prediction), accuracy rho (fraction of served slots answered correctly),
and effective accuracy alpha = rho * tau. Episodes are reproducible:
every (controller, episode) pair owns a derived random stream, and each
slot consumes draws in a fixed order.
"""

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from eectl.controllers import Action, action_cost
from eectl.energy_env import (
    CONDITIONS,
    GOOD,
    EnergyParams,
    InfeasibleActionError,
    SystemState,
    average_energy_rate,
    step_battery,
    step_source,
)
from eectl.trace import TraceSplits

EPISODE_HEADER = ("episode", "tau", "rho", "alpha", "served", "correct")
TRAJECTORY_HEADER = (
    "t",
    "battery_mean",
    "battery_halfwidth",
    "cumenergy_mean",
    "cumenergy_halfwidth",
)
SUMMARY_HEADER = ("controller", "alpha_mean", "alpha_ci", "rho_mean", "rho_ci", "tau_mean", "tau_ci")

METRICS = ("tau", "rho", "alpha")


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode shape: horizon, repetition count, initial conditions, master
    seed, and the label-set size used to score free guesses."""

    horizon: int = 10_000
    num_episodes: int = 5
    initial_battery: int | None = None  # None: start with a full battery
    initial_condition: str = GOOD
    seed: int = 0
    num_classes: int = 10


@dataclass(frozen=True)
class EpisodeResult:
    service_rate: float
    accuracy: float
    effective_accuracy: float
    battery: np.ndarray  # level at each decision time
    cum_energy: np.ndarray  # consumed through each slot
    cum_harvested: np.ndarray
    action_counts: dict
    served: int
    correct: int
    zero_served: bool  # accuracy reported as 0 because nothing was served


def run_episode(controller, trace: list, params: EnergyParams, cfg: EpisodeConfig, rng: np.random.Generator) -> EpisodeResult:
    """Run one episode, sampling the trace i.i.d. with replacement.

    Per-slot draw order is fixed: condition transition, arrival size (good
    slots only), trace index, any draws the controller makes, then the
    free-guess coin when applicable.
    """
    if not trace:
        raise ValueError("empty trace")
    if cfg.horizon < 1:
        raise ValueError("horizon must be positive")
    if cfg.initial_condition not in CONDITIONS:
        raise ValueError(f"unknown initial condition {cfg.initial_condition!r}")
    battery = params.capacity if cfg.initial_battery is None else cfg.initial_battery
    if not 0 <= battery <= params.capacity:
        raise ValueError(f"initial battery {battery} outside [0, {params.capacity}]")
    condition = cfg.initial_condition
    horizon = cfg.horizon
    n = len(trace)
    battery_traj = np.empty(horizon, dtype=np.int64)
    cum_energy = np.empty(horizon, dtype=np.int64)
    cum_harvested = np.empty(horizon, dtype=np.int64)
    counts = {a: 0 for a in Action}
    served = 0
    correct = 0
    consumed = 0
    harvested = 0
    guess_prob = 1.0 / cfg.num_classes
    for t in range(horizon):
        battery_traj[t] = battery
        outcome = step_source(condition, rng, params)
        sample = trace[int(rng.integers(n))]
        state = SystemState(battery, condition)
        action = controller.decide(state, sample, rng)
        cost = action_cost(action, params)
        if cost > battery:
            raise InfeasibleActionError(
                f"controller {controller.name!r} chose {action.name} with battery {battery}"
            )
        counts[action] += 1
        if action is not Action.DISCARD:
            served += 1
            if action is Action.EXIT_EARLY:
                ok = sample.correct_early
            elif action is Action.CONTINUE_FULL:
                ok = sample.correct_final
            else:
                ok = rng.random() < guess_prob
            correct += bool(ok)
        consumed += cost
        harvested += outcome.quanta
        cum_energy[t] = consumed
        cum_harvested[t] = harvested
        battery = step_battery(battery, cost, outcome.quanta, params)
        condition = outcome.condition
    service_rate = served / horizon
    accuracy = correct / served if served else 0.0
    return EpisodeResult(
        service_rate=service_rate,
        accuracy=accuracy,
        effective_accuracy=accuracy * service_rate,
        battery=battery_traj,
        cum_energy=cum_energy,
        cum_harvested=cum_harvested,
        action_counts=counts,
        served=served,
        correct=correct,
        zero_served=served == 0,
    )


def episode_seed(master_seed: int, controller_name: str, episode_index: int) -> np.random.SeedSequence:
    """Derived stream for one (controller, episode) pair: the controller
    name is hashed into the entropy pool so streams never collide."""
    digest = int.from_bytes(hashlib.sha256(controller_name.encode()).digest()[:8], "big")
    return np.random.SeedSequence(entropy=(master_seed, digest, episode_index))


@dataclass(frozen=True)
class AggregateResult:
    """Cross-episode means with normal-approximation 95% half-widths."""

    controller: str
    episodes: list
    means: dict
    halfwidths: dict
    battery_mean: np.ndarray
    battery_halfwidth: np.ndarray
    cum_energy_mean: np.ndarray
    cum_energy_halfwidth: np.ndarray


def _halfwidth(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    count = values.shape[0]
    if count < 2:
        return np.zeros(values.shape[1:]) if values.ndim > 1 else 0.0
    return 1.96 * values.std(axis=0, ddof=1) / math.sqrt(count)


def aggregate_episodes(controller_name: str, episodes: list) -> AggregateResult:
    taus = np.array([e.service_rate for e in episodes])
    rhos = np.array([e.accuracy for e in episodes])
    alphas = np.array([e.effective_accuracy for e in episodes])
    battery = np.stack([e.battery for e in episodes]).astype(float)
    cum_energy = np.stack([e.cum_energy for e in episodes]).astype(float)
    means = {"tau": float(taus.mean()), "rho": float(rhos.mean()), "alpha": float(alphas.mean())}
    halfwidths = {
        "tau": float(_halfwidth(taus)),
        "rho": float(_halfwidth(rhos)),
        "alpha": float(_halfwidth(alphas)),
    }
    return AggregateResult(
        controller=controller_name,
        episodes=list(episodes),
        means=means,
        halfwidths=halfwidths,
        battery_mean=battery.mean(axis=0),
        battery_halfwidth=np.asarray(_halfwidth(battery)),
        cum_energy_mean=cum_energy.mean(axis=0),
        cum_energy_halfwidth=np.asarray(_halfwidth(cum_energy)),
    )


def run_suite(controllers: list, trace_splits: TraceSplits, params: EnergyParams, cfg: EpisodeConfig) -> dict:
    """Run every controller for ``cfg.num_episodes`` episodes over the test
    split with independent derived seeds, then aggregate per controller."""
    if cfg.num_episodes < 1:
        raise ValueError("num_episodes must be positive")
    results: dict[str, AggregateResult] = {}
    for controller in controllers:
        episodes = []
        for k in range(cfg.num_episodes):
            rng = np.random.default_rng(episode_seed(cfg.seed, controller.name, k))
            episodes.append(run_episode(controller, trace_splits.test, params, cfg, rng))
        results[controller.name] = aggregate_episodes(controller.name, episodes)
    return results


@dataclass(frozen=True)
class EnergySeries:
    """Consumed-energy trajectory with flat-rate reference lines."""

    steps: np.ndarray
    consumed: np.ndarray
    exit_cost_line: np.ndarray
    continue_cost_line: np.ndarray
    income_line: np.ndarray


def cumulative_energy_series(result: EpisodeResult, params: EnergyParams) -> EnergySeries:
    """Per-slot cumulative consumption next to what flat exiting, flat
    continuing, and the incoming energy rate would cost."""
    steps = np.arange(1, result.cum_energy.size + 1)
    rate = average_energy_rate(params)
    return EnergySeries(
        steps=steps,
        consumed=result.cum_energy.copy(),
        exit_cost_line=params.cost_exit * steps,
        continue_cost_line=params.cost_continue * steps,
        income_line=rate * steps,
    )


def write_episode_csv(path, agg: AggregateResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(EPISODE_HEADER) + "\n")
        for k, e in enumerate(agg.episodes):
            fh.write(
                f"{k},{e.service_rate:.17g},{e.accuracy:.17g},"
                f"{e.effective_accuracy:.17g},{e.served},{e.correct}\n"
            )


def write_trajectory_csv(path, agg: AggregateResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRAJECTORY_HEADER) + "\n")
        for t in range(agg.battery_mean.size):
            fh.write(
                f"{t},{agg.battery_mean[t]:.17g},{agg.battery_halfwidth[t]:.17g},"
                f"{agg.cum_energy_mean[t]:.17g},{agg.cum_energy_halfwidth[t]:.17g}\n"
            )


def write_summary_csv(path, results: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(SUMMARY_HEADER) + "\n")
        for name, agg in results.items():
            fh.write(
                f"{name},{agg.means['alpha']:.17g},{agg.halfwidths['alpha']:.17g},"
                f"{agg.means['rho']:.17g},{agg.halfwidths['rho']:.17g},"
                f"{agg.means['tau']:.17g},{agg.halfwidths['tau']:.17g}\n"
            )


def read_summary_csv(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(SUMMARY_HEADER):
            raise ValueError(f"{path}: expected header {','.join(SUMMARY_HEADER)}")
        for row in reader:
            rows.append(
                {
                    "controller": row[0],
                    "alpha_mean": float(row[1]),
                    "alpha_ci": float(row[2]),
                    "rho_mean": float(row[3]),
                    "rho_ci": float(row[4]),
                    "tau_mean": float(row[5]),
                    "tau_ci": float(row[6]),
                }
            )
    return rows


def read_episode_csv(path) -> list:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(EPISODE_HEADER):
            raise ValueError(f"{path}: expected header {','.join(EPISODE_HEADER)}")
        for row in reader:
            rows.append(
                {
                    "episode": int(row[0]),
                    "tau": float(row[1]),
                    "rho": float(row[2]),
                    "alpha": float(row[3]),
                    "served": int(row[4]),
                    "correct": int(row[5]),
                }
            )
    return rows
