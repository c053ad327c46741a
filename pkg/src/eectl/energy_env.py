"""Ambient-energy source, harvest arrivals, and battery dynamics.

The energy side of the system is a two-state Markov condition process
(good/bad), an arrival law for harvested quanta that is active only in
good conditions, and a finite integer battery updated each slot by the
arrival minus the cost of the chosen action.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GOOD = "G"
BAD = "B"
CONDITIONS = (GOOD, BAD)

_PROB_SUM_TOL = 1e-12


class ReducibleChainError(ValueError):
    """The condition chain has no initial-state-free steady state."""


class InfeasibleActionError(RuntimeError):
    """An action costs more than the battery currently holds."""


@dataclass(frozen=True)
class EnergyParams:
    """Source chain, arrival law, battery capacity, and action costs.

    Energy is measured in integer quanta throughout. ``harvest_probs[i]``
    is the probability of harvesting ``i`` quanta during a good-condition
    slot; bad-condition slots never harvest. Costs must satisfy
    ``0 = cost_discard < cost_exit < cost_continue <= capacity``.
    """

    p_stay_good: float
    p_stay_bad: float
    harvest_probs: tuple[float, float, float]
    capacity: int
    cost_exit: int
    cost_continue: int
    cost_discard: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "harvest_probs", tuple(float(p) for p in self.harvest_probs)
        )
        if not 0.0 <= self.p_stay_good <= 1.0:
            raise ValueError(f"p_stay_good must be a probability, got {self.p_stay_good}")
        if not 0.0 <= self.p_stay_bad <= 1.0:
            raise ValueError(f"p_stay_bad must be a probability, got {self.p_stay_bad}")
        if len(self.harvest_probs) != 3 or any(p < 0.0 for p in self.harvest_probs):
            raise ValueError("harvest_probs must be three non-negative probabilities")
        if abs(sum(self.harvest_probs) - 1.0) > _PROB_SUM_TOL:
            raise ValueError(f"harvest_probs must sum to 1, got {sum(self.harvest_probs)}")
        if not 0 == self.cost_discard < self.cost_exit < self.cost_continue <= self.capacity:
            raise ValueError(
                "costs must satisfy 0 = cost_discard < cost_exit < cost_continue <= capacity"
            )


class SystemState(NamedTuple):
    """Decision-time state: battery level and the previous slot's condition."""

    battery: int
    condition: str


class HarvestOutcome(NamedTuple):
    """One slot of the source: the new condition and the quanta that arrived.

    ``quanta`` is always 0 when ``condition`` is bad.
    """

    condition: str
    quanta: int


def steady_state_good(params: EnergyParams) -> float:
    """Long-run probability of observing the good condition.

    Solves the two-state balance equation. The formula covers the singly
    absorbing special cases; the doubly absorbing chain is rejected because
    its long-run behaviour depends on the initial condition.
    """
    if params.p_stay_good == 1.0 and params.p_stay_bad == 1.0:
        raise ReducibleChainError(
            "both conditions are absorbing; the steady state depends on the start"
        )
    leave_good = 1.0 - params.p_stay_good
    leave_bad = 1.0 - params.p_stay_bad
    return leave_bad / (leave_good + leave_bad)


def average_energy_rate(params: EnergyParams) -> float:
    """Mean harvested quanta per slot in steady state."""
    _, lam1, lam2 = params.harvest_probs
    return (lam1 + 2.0 * lam2) * steady_state_good(params)


def step_source(condition: str, rng: np.random.Generator, params: EnergyParams) -> HarvestOutcome:
    """Advance the source by one slot.

    Consumes one uniform draw for the condition transition and, when the
    new condition is good, a second draw for the arrival size. Bad slots
    harvest nothing and consume no arrival draw.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    stay = params.p_stay_good if condition == GOOD else params.p_stay_bad
    if rng.random() < stay:
        nxt = condition
    else:
        nxt = BAD if condition == GOOD else GOOD
    if nxt == BAD:
        return HarvestOutcome(nxt, 0)
    lam0, lam1, _ = params.harvest_probs
    u = rng.random()
    if u < lam0:
        quanta = 0
    elif u < lam0 + lam1:
        quanta = 1
    else:
        quanta = 2
    return HarvestOutcome(nxt, quanta)


def step_battery(battery: int, cost: int, quanta: int, params: EnergyParams) -> int:
    """Charge/discharge the battery for one slot, clamping at capacity."""
    if cost > battery:
        raise InfeasibleActionError(f"action cost {cost} exceeds battery level {battery}")
    return min(battery - cost + quanta, params.capacity)
