"""Experiment configuration: TOML loading with defaults, whole-file
validation that reports every violated field at once, and environment
overrides for the output directory and master seed."""

import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from eectl.energy_env import CONDITIONS, EnergyParams
from eectl.sim import EpisodeConfig
from eectl.trace import GeneratorConfig

ENV_OUTPUT_DIR = "EECTL_OUTPUT_DIR"
ENV_SEED = "EECTL_SEED"

KNOWN_CONTROLLERS = ("always_continue", "always_exit", "eao", "oncc", "cc")

_DEFAULTS = {
    "energy": {
        "p_stay_good": 0.9,
        "p_stay_bad": 0.6,
        "harvest_probs": [0.1, 0.2, 0.7],
        "capacity": 50,
        "cost_exit": 1,
        "cost_continue": 2,
    },
    "trace": {
        "source": "synthetic",
        "num_classes": 10,
        "num_samples": 50_000,
        "split_fractions": [0.5, 0.25, 0.25],
        "csv_path": None,
        "logits_path": None,
    },
    "generator": {
        "acc_early": 0.76,
        "acc_final": 0.93,
        "early_concentration": 3.0,
        "final_concentration": 25.0,
    },
    "solver": {
        "grid_resolution": 256,
        "reference_battery": 0,
        "reference_condition": "G",
        "max_iterations": 1000,
    },
    "controllers": {
        "enabled": list(KNOWN_CONTROLLERS),
        "alc_exit_fallback": False,
        "correctness_coupling": 0.0,
    },
    "sim": {
        "horizon": 10_000,
        "num_episodes": 5,
        "initial_battery": None,
        "initial_condition": "G",
        "seed": 2024,
    },
    "output": {"dir": "results"},
}


class ConfigValidationError(ValueError):
    """Invalid configuration; ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems)
        )


@dataclass(frozen=True)
class TraceConfig:
    source: str  # "synthetic" or "csv"
    num_classes: int
    num_samples: int
    split_fractions: tuple[float, float, float]
    generator: GeneratorConfig
    csv_path: Path | None
    logits_path: Path | None


@dataclass(frozen=True)
class SolverConfig:
    grid_resolution: int
    reference_battery: int
    reference_condition: str
    max_iterations: int


@dataclass(frozen=True)
class ControllerConfig:
    enabled: tuple
    alc_exit_fallback: bool
    correctness_coupling: float


@dataclass(frozen=True)
class ExperimentConfig:
    energy: EnergyParams
    trace: TraceConfig
    solver: SolverConfig
    controllers: ControllerConfig
    sim: EpisodeConfig
    output_dir: Path


class _Section:
    """Typed access into one merged config section, accumulating problems."""

    def __init__(self, name, values, problems):
        self.name = name
        self.values = values
        self.problems = problems

    def flag(self, key, message):
        self.problems.append(f"{self.name}.{key}: {message}")

    def get(self, key):
        return self.values[key]

    def number(self, key, lo=None, hi=None):
        value = self.values[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.flag(key, f"expected a number, got {value!r}")
            return None
        value = float(value)
        if lo is not None and value < lo:
            self.flag(key, f"must be >= {lo}, got {value}")
            return None
        if hi is not None and value > hi:
            self.flag(key, f"must be <= {hi}, got {value}")
            return None
        return value

    def integer(self, key, lo=None, hi=None):
        value = self.values[key]
        if isinstance(value, bool) or not isinstance(value, int):
            self.flag(key, f"expected an integer, got {value!r}")
            return None
        if lo is not None and value < lo:
            self.flag(key, f"must be >= {lo}, got {value}")
            return None
        if hi is not None and value > hi:
            self.flag(key, f"must be <= {hi}, got {value}")
            return None
        return value

    def boolean(self, key):
        value = self.values[key]
        if not isinstance(value, bool):
            self.flag(key, f"expected a boolean, got {value!r}")
            return None
        return value

    def string(self, key, allowed=None):
        value = self.values[key]
        if not isinstance(value, str):
            self.flag(key, f"expected a string, got {value!r}")
            return None
        if allowed is not None and value not in allowed:
            self.flag(key, f"must be one of {sorted(allowed)}, got {value!r}")
            return None
        return value


def _merge(raw, problems):
    """Overlay the file's tables onto the defaults, flagging unknown keys."""
    merged = {section: dict(values) for section, values in _DEFAULTS.items()}
    known_sections = set(_DEFAULTS) - {"generator"}
    for section, values in raw.items():
        if section not in known_sections:
            problems.append(f"{section}: unknown section")
            continue
        if not isinstance(values, dict):
            problems.append(f"{section}: expected a table")
            continue
        for key, value in values.items():
            if section == "trace" and key == "generator":
                if not isinstance(value, dict):
                    problems.append("trace.generator: expected a table")
                    continue
                for gkey, gvalue in value.items():
                    if gkey not in merged["generator"]:
                        problems.append(f"trace.generator.{gkey}: unknown key")
                    else:
                        merged["generator"][gkey] = gvalue
                continue
            if key not in merged[section]:
                problems.append(f"{section}.{key}: unknown key")
            else:
                merged[section][key] = value
    return merged


def load_config(path) -> ExperimentConfig:
    """Parse, merge with defaults, and validate a TOML experiment config.

    Relative paths (trace inputs and the output directory) resolve against
    the config file's directory. ``EECTL_OUTPUT_DIR`` and ``EECTL_SEED``
    override the output directory and master seed.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigValidationError([f"config file not found: {path}"])
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigValidationError([f"TOML parse error: {exc}"]) from None

    problems: list[str] = []
    merged = _merge(raw, problems)
    base_dir = path.parent

    energy = _Section("energy", merged["energy"], problems)
    p_stay_good = energy.number("p_stay_good", 0.0, 1.0)
    p_stay_bad = energy.number("p_stay_bad", 0.0, 1.0)
    harvest = energy.get("harvest_probs")
    if (
        not isinstance(harvest, (list, tuple))
        or len(harvest) != 3
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in harvest)
    ):
        energy.flag("harvest_probs", f"expected three numbers, got {harvest!r}")
        harvest = None
    else:
        harvest = tuple(float(v) for v in harvest)
        if min(harvest) < 0.0 or abs(sum(harvest) - 1.0) > 1e-12:
            energy.flag("harvest_probs", "must be non-negative and sum to 1")
            harvest = None
    capacity = energy.integer("capacity", 1)
    cost_exit = energy.integer("cost_exit", 1)
    cost_continue = energy.integer("cost_continue", 2)
    if None not in (capacity, cost_exit, cost_continue):
        if not cost_exit < cost_continue <= capacity:
            energy.flag("cost_continue", "costs must satisfy cost_exit < cost_continue <= capacity")

    trace = _Section("trace", merged["trace"], problems)
    source = trace.string("source", allowed=("synthetic", "csv"))
    num_classes = trace.integer("num_classes", 2)
    num_samples = trace.integer("num_samples", 4)
    fractions = trace.get("split_fractions")
    if (
        not isinstance(fractions, (list, tuple))
        or len(fractions) != 3
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in fractions)
    ):
        trace.flag("split_fractions", f"expected three numbers, got {fractions!r}")
        fractions = None
    else:
        fractions = tuple(float(v) for v in fractions)
        if min(fractions) < 0.0 or abs(sum(fractions) - 1.0) > 1e-9:
            trace.flag("split_fractions", "must be non-negative and sum to 1")
            fractions = None
    csv_path = merged["trace"]["csv_path"]
    if csv_path is not None:
        if not isinstance(csv_path, str):
            trace.flag("csv_path", f"expected a string, got {csv_path!r}")
            csv_path = None
        else:
            csv_path = base_dir / csv_path
            if not csv_path.is_file():
                trace.flag("csv_path", f"file not found: {csv_path}")
    if source == "csv" and csv_path is None:
        trace.flag("csv_path", "required when trace.source = 'csv'")
    logits_path = merged["trace"]["logits_path"]
    if logits_path is not None:
        if not isinstance(logits_path, str):
            trace.flag("logits_path", f"expected a string, got {logits_path!r}")
            logits_path = None
        else:
            logits_path = base_dir / logits_path
            if not logits_path.is_file():
                trace.flag("logits_path", f"file not found: {logits_path}")

    generator = _Section("trace.generator", merged["generator"], problems)
    acc_early = generator.number("acc_early", 0.0, 1.0)
    acc_final = generator.number("acc_final", 0.0, 1.0)
    early_conc = generator.number("early_concentration")
    final_conc = generator.number("final_concentration")
    if early_conc is not None and early_conc <= 0.0:
        generator.flag("early_concentration", "must be positive")
    if final_conc is not None and final_conc <= 0.0:
        generator.flag("final_concentration", "must be positive")
    if None not in (acc_early, acc_final) and acc_early > acc_final:
        generator.flag("acc_early", "must not exceed acc_final")
    if None not in (acc_early, num_classes) and acc_early < 1.0 / num_classes:
        generator.flag("acc_early", f"below the uniform-confidence floor 1/{num_classes}")

    solver = _Section("solver", merged["solver"], problems)
    grid_resolution = solver.integer("grid_resolution", 1)
    reference_battery = solver.integer("reference_battery", 0)
    if None not in (reference_battery, capacity) and reference_battery > capacity:
        solver.flag("reference_battery", f"must be <= capacity {capacity}")
    reference_condition = solver.string("reference_condition", allowed=CONDITIONS)
    max_iterations = solver.integer("max_iterations", 1)

    controllers = _Section("controllers", merged["controllers"], problems)
    enabled = controllers.get("enabled")
    if not isinstance(enabled, (list, tuple)) or not enabled:
        controllers.flag("enabled", f"expected a non-empty list, got {enabled!r}")
        enabled = None
    else:
        unknown = [str(c) for c in enabled if c not in KNOWN_CONTROLLERS]
        if unknown:
            controllers.flag("enabled", f"unknown controllers {unknown}; known: {list(KNOWN_CONTROLLERS)}")
            enabled = None
        elif len(set(enabled)) != len(enabled):
            controllers.flag("enabled", "duplicate controllers")
            enabled = None
        else:
            enabled = tuple(enabled)
    alc_exit_fallback = controllers.boolean("alc_exit_fallback")
    coupling = controllers.number("correctness_coupling", 0.0, 1.0)

    sim = _Section("sim", merged["sim"], problems)
    horizon = sim.integer("horizon", 1)
    num_episodes = sim.integer("num_episodes", 1)
    initial_battery = merged["sim"]["initial_battery"]
    if initial_battery is not None:
        if isinstance(initial_battery, bool) or not isinstance(initial_battery, int):
            sim.flag("initial_battery", f"expected an integer, got {initial_battery!r}")
            initial_battery = None
        elif capacity is not None and not 0 <= initial_battery <= capacity:
            sim.flag("initial_battery", f"outside [0, {capacity}]")
            initial_battery = None
    initial_condition = sim.string("initial_condition", allowed=CONDITIONS)
    seed = sim.integer("seed", 0)

    output = _Section("output", merged["output"], problems)
    out_dir = output.string("dir")
    if out_dir is not None and not out_dir:
        output.flag("dir", "must be non-empty")
        out_dir = None

    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    if env_dir:
        out_dir = env_dir
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            seed = int(env_seed)
            if seed < 0:
                raise ValueError
        except ValueError:
            problems.append(f"{ENV_SEED}: expected a non-negative integer, got {env_seed!r}")

    if problems:
        raise ConfigValidationError(problems)

    energy_params = EnergyParams(
        p_stay_good=p_stay_good,
        p_stay_bad=p_stay_bad,
        harvest_probs=harvest,
        capacity=capacity,
        cost_exit=cost_exit,
        cost_continue=cost_continue,
    )
    generator_cfg = GeneratorConfig(
        num_classes=num_classes,
        acc_early=acc_early,
        acc_final=acc_final,
        early_concentration=early_conc,
        final_concentration=final_conc,
        correctness_coupling=coupling,
    )
    trace_cfg = TraceConfig(
        source=source,
        num_classes=num_classes,
        num_samples=num_samples,
        split_fractions=fractions,
        generator=generator_cfg,
        csv_path=csv_path,
        logits_path=logits_path,
    )
    solver_cfg = SolverConfig(
        grid_resolution=grid_resolution,
        reference_battery=reference_battery,
        reference_condition=reference_condition,
        max_iterations=max_iterations,
    )
    controller_cfg = ControllerConfig(
        enabled=enabled,
        alc_exit_fallback=alc_exit_fallback,
        correctness_coupling=coupling,
    )
    sim_cfg = EpisodeConfig(
        horizon=horizon,
        num_episodes=num_episodes,
        initial_battery=initial_battery,
        initial_condition=initial_condition,
        seed=seed,
        num_classes=num_classes,
    )
    out_path = Path(out_dir)
    if not out_path.is_absolute():
        out_path = base_dir / out_path
    return ExperimentConfig(
        energy=energy_params,
        trace=trace_cfg,
        solver=solver_cfg,
        controllers=controller_cfg,
        sim=sim_cfg,
        output_dir=out_path,
    )
