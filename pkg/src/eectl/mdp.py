"""Average-reward MDP over exit thresholds.

States pair the battery level with the previous slot's harvesting
condition. A policy assigns each state that can afford full computation
one threshold on the confidence gap: the sample exits early exactly when
its gap is within the threshold. Because the environment feels a
threshold only through its exit probability, candidate thresholds are
empirical gap quantiles, so the grid covers every achievable exit
probability at the grid resolution. States that cannot afford full
computation are forced: discard below the exit cost (zero reward), exit
otherwise (mean early confidence as reward).

``policy_iteration`` solves the model; ``brute_force_oracle`` re-solves
small instances by exhaustive enumeration over stationary distributions
and exists purely to cross-check the solver.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from eectl.energy_env import BAD, GOOD, EnergyParams, SystemState
from eectl.trace import GapDistribution, build_gap_distribution

SENTINEL_STEP = 1e-6  # offset of the never-exit grid point below the gap support
TIE_TOLERANCE = 1e-12  # improvement treats candidate values this close as tied

POLICY_HEADER = ("b", "h", "gamma", "exit_prob")


class UnichainViolationError(RuntimeError):
    """A policy's chain has more than one recurrent class, so the
    average-reward evaluation system is singular."""


class SolverConvergenceError(RuntimeError):
    """Policy iteration failed to settle within the iteration cap."""


class EnumerationLimitError(ValueError):
    """The exhaustive oracle would have to evaluate too many policies."""


def enumerate_states(capacity: int) -> list[SystemState]:
    """All (battery, condition) states, battery-major with good first."""
    return [SystemState(b, h) for b in range(capacity + 1) for h in (GOOD, BAD)]


def build_transition_kernel(params: EnergyParams) -> dict[str, np.ndarray]:
    """Dense per-action transition matrices over (battery, condition).

    Rows exist only where the action is affordable; unaffordable rows are
    NaN so accidental use surfaces immediately. Within a row the condition
    advances first, the arrival is drawn given the new condition, and the
    battery moves by arrival minus cost, clamped at capacity.
    """
    states = enumerate_states(params.capacity)
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    lam0, lam1, lam2 = params.harvest_probs
    costs = {
        "discard": params.cost_discard,
        "exit": params.cost_exit,
        "continue": params.cost_continue,
    }
    kernel: dict[str, np.ndarray] = {}
    for action, cost in costs.items():
        matrix = np.full((n, n), np.nan)
        for i, (battery, condition) in enumerate(states):
            if cost > battery:
                continue
            row = np.zeros(n)
            stay = params.p_stay_good if condition == GOOD else params.p_stay_bad
            other = BAD if condition == GOOD else GOOD
            for nxt, p_nxt in ((condition, stay), (other, 1.0 - stay)):
                if p_nxt == 0.0:
                    continue
                arrivals = ((0, lam0), (1, lam1), (2, lam2)) if nxt == GOOD else ((0, 1.0),)
                for quanta, p_quanta in arrivals:
                    mass = p_nxt * p_quanta
                    if mass == 0.0:
                        continue
                    dest = SystemState(min(battery - cost + quanta, params.capacity), nxt)
                    row[index[dest]] += mass
            matrix[i] = row
        kernel[action] = matrix
    return kernel


def reward_estimate(samples: list, threshold: float) -> float:
    """Expected confidence earned under one exit threshold: early
    confidence when the gap is within the threshold, final otherwise."""
    if not samples:
        raise ValueError("no samples")
    total = 0.0
    for s in samples:
        total += s.conf_early if s.gap <= threshold else s.conf_final
    return total / len(samples)


def build_threshold_grid(dist: GapDistribution, resolution: int = 256) -> np.ndarray:
    """Candidate thresholds: empirical gap quantiles at ``resolution``
    evenly spaced probability levels, plus one sentinel strictly below the
    support (never exit) and the supremum itself (always exit)."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    levels = np.linspace(0.0, 1.0, resolution)
    quantiles = np.quantile(dist.sorted_gaps, levels, method="inverted_cdf")
    sentinel = dist.support_lo - SENTINEL_STEP
    return np.unique(np.concatenate(([sentinel], np.atleast_1d(quantiles), [dist.support_hi])))


@dataclass(frozen=True)
class MdpModel:
    """Assembled finite model: states, threshold grid, grid-indexed reward
    and exit probability, and per-action transition kernels."""

    params: EnergyParams
    states: list[SystemState]
    index: dict[SystemState, int]
    grid: np.ndarray
    reward_of_threshold: np.ndarray
    exit_prob_of_threshold: np.ndarray
    kernel: dict[str, np.ndarray]
    mean_conf_early: float
    gap_dist: GapDistribution


def build_model(params: EnergyParams, est_samples: list, grid_resolution: int = 256) -> MdpModel:
    """Assemble the model from an estimation trace: gap distribution,
    threshold grid, per-grid-point reward and exit probability, kernels."""
    dist = build_gap_distribution(est_samples)
    grid = build_threshold_grid(dist, grid_resolution)
    conf_early = np.array([s.conf_early for s in est_samples])
    conf_final = np.array([s.conf_final for s in est_samples])
    gaps = conf_final - conf_early
    reward = np.array(
        [float(np.where(gaps <= g, conf_early, conf_final).mean()) for g in grid]
    )
    exit_prob = np.asarray(dist.cdf(grid), dtype=float)
    states = enumerate_states(params.capacity)
    return MdpModel(
        params=params,
        states=states,
        index={s: i for i, s in enumerate(states)},
        grid=grid,
        reward_of_threshold=reward,
        exit_prob_of_threshold=exit_prob,
        kernel=build_transition_kernel(params),
        mean_conf_early=float(conf_early.mean()),
        gap_dist=dist,
    )


@dataclass(frozen=True)
class ThresholdPolicy:
    """One exit threshold per state that can afford full computation, plus
    the forced rules implied by the costs (discard below the exit cost,
    exit below the continue cost)."""

    thresholds: dict[SystemState, float]
    cost_exit: int
    cost_continue: int
    exit_probs: dict[SystemState, float] | None = None


@dataclass(frozen=True)
class PiSolution:
    """Solved policy with its long-run reward per slot (gain) and the
    relative value of each state (bias, zero at the reference state)."""

    policy: ThresholdPolicy
    gain: float
    bias: dict[SystemState, float]
    iterations: int


def _band_rows(model: MdpModel):
    """Controlled state indices plus the fixed rows/rewards of the forced bands."""
    params = model.params
    n = len(model.states)
    controlled = [i for i, s in enumerate(model.states) if s.battery >= params.cost_continue]
    base_rows = np.zeros((n, n))
    base_rewards = np.zeros(n)
    for i, s in enumerate(model.states):
        if s.battery < params.cost_exit:
            base_rows[i] = model.kernel["discard"][i]
        elif s.battery < params.cost_continue:
            base_rows[i] = model.kernel["exit"][i]
            base_rewards[i] = model.mean_conf_early
    return controlled, base_rows, base_rewards


def _assemble(model: MdpModel, controlled, base_rows, base_rewards, choice):
    p_exit = model.kernel["exit"]
    p_cont = model.kernel["continue"]
    matrix = base_rows.copy()
    rewards = base_rewards.copy()
    for pos, i in enumerate(controlled):
        f = model.exit_prob_of_threshold[choice[pos]]
        matrix[i] = f * p_exit[i] + (1.0 - f) * p_cont[i]
        rewards[i] = model.reward_of_threshold[choice[pos]]
    return matrix, rewards


def _evaluate(matrix: np.ndarray, rewards: np.ndarray, ref: int):
    """Solve gain and bias for a fixed policy with bias(ref) pinned to 0."""
    n = matrix.shape[0]
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = np.eye(n) - matrix
    system[:n, n] = 1.0
    system[n, ref] = 1.0
    rhs = np.zeros(n + 1)
    rhs[:n] = rewards
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise UnichainViolationError(
            "singular policy-evaluation system; the induced chain is not unichain"
        ) from exc
    if not np.all(np.isfinite(solution)):
        raise UnichainViolationError("non-finite policy evaluation")
    return float(solution[n]), solution[:n]


def _solution_from_choice(model: MdpModel, controlled, choice, gain, values, iterations) -> PiSolution:
    thresholds = {}
    exit_probs = {}
    for pos, i in enumerate(controlled):
        state = model.states[i]
        thresholds[state] = float(model.grid[choice[pos]])
        exit_probs[state] = float(model.exit_prob_of_threshold[choice[pos]])
    policy = ThresholdPolicy(
        thresholds=thresholds,
        cost_exit=model.params.cost_exit,
        cost_continue=model.params.cost_continue,
        exit_probs=exit_probs,
    )
    bias = {s: float(values[i]) for i, s in enumerate(model.states)}
    return PiSolution(policy=policy, gain=gain, bias=bias, iterations=iterations)


def _argmax_largest(values: np.ndarray) -> int:
    """Index of the maximum, breaking near-ties toward the last (largest
    threshold, i.e. highest exit probability)."""
    return int(np.nonzero(values >= values.max() - TIE_TOLERANCE)[0][-1])


def policy_iteration(model: MdpModel, reference_state: SystemState, max_iterations: int = 1000) -> PiSolution:
    """Average-reward policy iteration over the threshold grid.

    Alternates exact policy evaluation with greedy improvement until the
    policy stops changing. Ties in the improvement step go to the largest
    threshold so reruns are reproducible.
    """
    if reference_state not in model.index:
        raise ValueError(f"unknown reference state {reference_state}")
    ref = model.index[reference_state]
    if model.grid.size == 0:
        raise ValueError("empty threshold grid")
    controlled, base_rows, base_rewards = _band_rows(model)
    p_exit = model.kernel["exit"]
    p_cont = model.kernel["continue"]
    exit_prob = model.exit_prob_of_threshold
    reward = model.reward_of_threshold

    choice = np.full(len(controlled), _argmax_largest(reward), dtype=int)
    for iteration in range(1, max_iterations + 1):
        matrix, rewards = _assemble(model, controlled, base_rows, base_rewards, choice)
        gain, values = _evaluate(matrix, rewards, ref)
        new_choice = choice.copy()
        for pos, i in enumerate(controlled):
            exit_value = p_exit[i] @ values
            cont_value = p_cont[i] @ values
            q = reward + exit_prob * exit_value + (1.0 - exit_prob) * cont_value
            new_choice[pos] = _argmax_largest(q)
        if np.array_equal(new_choice, choice):
            return _solution_from_choice(model, controlled, choice, gain, values, iteration)
        choice = new_choice
    raise SolverConvergenceError(f"policy iteration did not settle within {max_iterations} iterations")


def evaluate_threshold_policy(model: MdpModel, policy: ThresholdPolicy, reference_state: SystemState) -> PiSolution:
    """Gain and bias of a fixed policy whose thresholds are grid points."""
    if reference_state not in model.index:
        raise ValueError(f"unknown reference state {reference_state}")
    ref = model.index[reference_state]
    controlled, base_rows, base_rewards = _band_rows(model)
    choice = np.empty(len(controlled), dtype=int)
    for pos, i in enumerate(controlled):
        state = model.states[i]
        threshold = policy.thresholds[state]
        j = int(np.searchsorted(model.grid, threshold))
        if j >= model.grid.size or model.grid[j] != threshold:
            raise ValueError(f"threshold {threshold} for state {state} is not a grid point")
        choice[pos] = j
    matrix, rewards = _assemble(model, controlled, base_rows, base_rewards, choice)
    gain, values = _evaluate(matrix, rewards, ref)
    return _solution_from_choice(model, controlled, choice, gain, values, 1)


def _stationary_single(matrix: np.ndarray) -> np.ndarray:
    """Least-squares stationary distribution; for a multichain matrix the
    minimum-norm solution is a convex mixture over recurrent classes."""
    n = matrix.shape[0]
    system = np.vstack([matrix.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    total = pi.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise UnichainViolationError("no stationary distribution found")
    return pi / total


def _stationary_batch(matrices: np.ndarray) -> np.ndarray:
    """Stationary distributions for a batch of chains.

    Uses the rank-one corrected system (I - P^T + ones) pi = 1, whose
    unique solution for a unichain P is the stationary distribution.
    Singular batches (multichain members) fall back to per-chain
    least squares.
    """
    count, n, _ = matrices.shape
    system = np.eye(n) - np.swapaxes(matrices, 1, 2) + 1.0
    rhs = np.ones((count, n, 1))
    try:
        return np.linalg.solve(system, rhs)[..., 0]
    except np.linalg.LinAlgError:
        return np.stack([_stationary_single(matrices[j]) for j in range(count)])


def brute_force_oracle(
    model: MdpModel,
    reference_state: SystemState | None = None,
    max_policies: int = 1_000_000,
    chunk_size: int = 20_000,
) -> PiSolution:
    """Enumerate every grid policy and return the one with the highest
    long-run reward, scored exactly as the stationary-distribution-weighted
    mean of per-state rewards.

    Independent of (and therefore a check on) policy iteration. The
    enumeration count ``grid ** controlled_states`` is capped.
    """
    controlled, base_rows, base_rewards = _band_rows(model)
    p_exit = model.kernel["exit"]
    p_cont = model.kernel["continue"]
    n = len(model.states)
    m = len(controlled)
    grid_size = int(model.grid.size)
    total = grid_size**m
    if total > max_policies:
        raise EnumerationLimitError(
            f"{total} candidate policies exceed the enumeration limit {max_policies}"
        )
    radix = grid_size ** np.arange(m - 1, -1, -1, dtype=np.int64)
    best_gain = -np.inf
    best_combo = None
    for start in range(0, total, chunk_size):
        ids = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
        combos = (ids[:, None] // radix) % grid_size
        exit_probs = model.exit_prob_of_threshold[combos]
        rewards = np.tile(base_rewards, (ids.size, 1))
        rewards[:, controlled] = model.reward_of_threshold[combos]
        matrices = np.broadcast_to(base_rows, (ids.size, n, n)).copy()
        for pos, i in enumerate(controlled):
            f = exit_probs[:, pos, None]
            matrices[:, i, :] = f * p_exit[i] + (1.0 - f) * p_cont[i]
        stationary = _stationary_batch(matrices)
        gains = np.einsum("kn,kn->k", stationary, rewards)
        local_best = int(np.argmax(gains))
        if gains[local_best] > best_gain:
            best_gain = float(gains[local_best])
            best_combo = combos[local_best].copy()
    if reference_state is None:
        reference_state = model.states[0]
    ref = model.index[reference_state]
    matrix, rewards = _assemble(model, controlled, base_rows, base_rewards, best_combo)
    try:
        _, values = _evaluate(matrix, rewards, ref)
    except UnichainViolationError:
        values = np.zeros(n)  # bias undefined for multichain winners
    return _solution_from_choice(model, controlled, best_combo, best_gain, values, total)


def threshold_exchange_check(samples: list, exit_count: int) -> bool:
    """Exhaustively verify that exiting on the ``exit_count`` samples with
    the smallest confidence gaps maximizes the earned confidence among all
    exit sets of exactly that size (ties allowed)."""
    n = len(samples)
    if not 0 <= exit_count <= n:
        raise ValueError("exit_count outside [0, n]")
    if n > 20:
        raise ValueError("exhaustive check limited to 20 samples")
    gaps = [s.gap for s in samples]
    base = sum(s.conf_final for s in samples)
    threshold_value = base - sum(sorted(gaps)[:exit_count])
    best = -np.inf
    for combo in itertools.combinations(range(n), exit_count):
        value = base - sum(gaps[i] for i in combo)
        if value > best:
            best = value
    return threshold_value >= best - 1e-12


def write_policy_csv(path, policy: ThresholdPolicy) -> None:
    """Serialize a solved policy; one row per state that can afford full
    computation, ordered by battery with good conditions first."""
    if policy.exit_probs is None:
        raise ValueError("policy has no exit probabilities to serialize")
    order = sorted(policy.thresholds, key=lambda s: (s.battery, 0 if s.condition == GOOD else 1))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(POLICY_HEADER) + "\n")
        for state in order:
            fh.write(
                f"{state.battery},{state.condition},"
                f"{policy.thresholds[state]:.17g},{policy.exit_probs[state]:.17g}\n"
            )


def read_policy_csv(path, params: EnergyParams) -> ThresholdPolicy:
    import csv as _csv

    thresholds: dict[SystemState, float] = {}
    exit_probs: dict[SystemState, float] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != list(POLICY_HEADER):
            raise ValueError(f"{path}: expected header {','.join(POLICY_HEADER)}")
        for row in reader:
            battery = int(row[0])
            condition = row[1]
            if condition not in (GOOD, BAD):
                raise ValueError(f"{path}: unknown condition {condition!r}")
            state = SystemState(battery, condition)
            thresholds[state] = float(row[2])
            exit_probs[state] = float(row[3])
    return ThresholdPolicy(
        thresholds=thresholds,
        cost_exit=params.cost_exit,
        cost_continue=params.cost_continue,
        exit_probs=exit_probs,
    )
