"""Command-line pipeline: trace generation or calibration, policy and
predictor fitting, simulation, and reporting, all driven by one TOML
config.

Every command is deterministic given the config and seed: the trace
generator and splitter use streams derived from the master seed, and all
outputs are written with fixed formatting, so reruns are byte-identical.

Exit codes: 0 success, 2 config or input validation failure, 3 missing
prerequisite artifact, 4 numerical failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from eectl.config import ConfigValidationError, ExperimentConfig, load_config
from eectl.controllers import (
    AlwaysContinueController,
    AlwaysExitController,
    CcController,
    EaoController,
    OnccController,
    build_cc_predictors,
    fit_exit_predictor,
    predictors_from_table,
    read_predictor_csv,
    write_predictor_csv,
)
from eectl.energy_env import BAD, GOOD, SystemState, average_energy_rate
from eectl.mdp import (
    EnumerationLimitError,
    SolverConvergenceError,
    UnichainViolationError,
    brute_force_oracle,
    build_model,
    policy_iteration,
    read_policy_csv,
    write_policy_csv,
)
from eectl.sim import (
    cumulative_energy_series,
    read_episode_csv,
    read_summary_csv,
    run_suite,
    write_episode_csv,
    write_summary_csv,
    write_trajectory_csv,
)
from eectl.trace import (
    TraceFormatError,
    TraceSplits,
    apply_temperature,
    emit_csv,
    generate_synthetic,
    ingest_csv,
    read_logit_csv,
    split,
    temperature_scale,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

FILE_TRACE_EST = "trace_est.csv"
FILE_TRACE_NB = "trace_nb.csv"
FILE_TRACE_TEST = "trace_test.csv"
FILE_POLICY = "policy.csv"
FILE_PREDICTOR = "predictor.csv"
FILE_SUMMARY = "summary.csv"
FILE_REPORT = "report.md"

# Substream tags mixed into the master seed so generation and splitting
# draw from independent reproducible streams.
_TRACE_STREAM = 1
_SPLIT_STREAM = 2


class MissingArtifactError(FileNotFoundError):
    """A pipeline input produced by an earlier command is missing."""


def _derived_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, stream)))


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise MissingArtifactError(f"{path} not found; run `eectl {producer}` first")
    return path


def _write_splits(cfg: ExperimentConfig, samples: list) -> TraceSplits:
    splits = split(samples, cfg.trace.split_fractions, _derived_rng(cfg.sim.seed, _SPLIT_STREAM))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    emit_csv(cfg.output_dir / FILE_TRACE_EST, splits.est)
    emit_csv(cfg.output_dir / FILE_TRACE_NB, splits.nb)
    emit_csv(cfg.output_dir / FILE_TRACE_TEST, splits.test)
    return splits


def _print_trace_stats(samples: list) -> None:
    early = np.array([s.correct_early for s in samples], dtype=float)
    final = np.array([s.correct_final for s in samples], dtype=float)
    gap = np.array([s.gap for s in samples])
    print(f"samples: {len(samples)}")
    print(f"realized early accuracy:  {early.mean():.4f}")
    print(f"realized final accuracy:  {final.mean():.4f}")
    print(f"mean confidence gap:      {gap.mean():.4f}")


def cmd_gen_trace(config_path) -> None:
    """Generate (or ingest) a trace and write the three split files."""
    cfg = load_config(config_path)
    if cfg.trace.source == "synthetic":
        samples = generate_synthetic(
            cfg.trace.num_samples, cfg.trace.generator, _derived_rng(cfg.sim.seed, _TRACE_STREAM)
        )
    else:
        samples = ingest_csv(cfg.trace.csv_path, cfg.trace.num_classes)
    splits = _write_splits(cfg, samples)
    _print_trace_stats(samples)
    print(
        f"split sizes: est={len(splits.est)} nb={len(splits.nb)} test={len(splits.test)}"
    )
    print(f"wrote {FILE_TRACE_EST}, {FILE_TRACE_NB}, {FILE_TRACE_TEST} to {cfg.output_dir}")


def cmd_calibrate(config_path) -> None:
    """Fit per-head temperatures on the configured logit file and write the
    calibrated trace splits."""
    cfg = load_config(config_path)
    if cfg.trace.logits_path is None:
        raise ConfigValidationError(["trace.logits_path: required for `eectl calibrate`"])
    records = read_logit_csv(cfg.trace.logits_path)
    temp_early = temperature_scale(records, head="early")
    temp_final = temperature_scale(records, head="final")
    samples = apply_temperature(records, temp_early, temp_final)
    splits = _write_splits(cfg, samples)
    print(f"fitted temperatures: early={temp_early:.4f} final={temp_final:.4f}")
    _print_trace_stats(samples)
    print(
        f"split sizes: est={len(splits.est)} nb={len(splits.nb)} test={len(splits.test)}"
    )


def cmd_fit(config_path, oracle_check: bool = False) -> None:
    """Solve the threshold policy on the estimation split and fit the exit
    predictors on the naive-Bayes split."""
    cfg = load_config(config_path)
    est = ingest_csv(_require(cfg.output_dir / FILE_TRACE_EST, "gen-trace"), cfg.trace.num_classes)
    nb = ingest_csv(_require(cfg.output_dir / FILE_TRACE_NB, "gen-trace"), cfg.trace.num_classes)
    model = build_model(cfg.energy, est, cfg.solver.grid_resolution)
    reference = SystemState(cfg.solver.reference_battery, cfg.solver.reference_condition)
    solution = policy_iteration(model, reference, cfg.solver.max_iterations)
    write_policy_csv(cfg.output_dir / FILE_POLICY, solution.policy)
    fits = {
        threshold: fit_exit_predictor(nb, threshold)
        for threshold in sorted(set(solution.policy.thresholds.values()))
    }
    write_predictor_csv(cfg.output_dir / FILE_PREDICTOR, fits)
    print(f"policy iteration converged in {solution.iterations} iterations")
    print(f"long-run expected confidence (gain): {solution.gain:.6f}")
    print(f"incoming energy rate: {average_energy_rate(cfg.energy):.4f} quanta/slot")
    print("exit probability by state (battery: good, bad):")
    policy = solution.policy
    for battery in range(cfg.energy.cost_continue, cfg.energy.capacity + 1):
        good = policy.exit_probs[SystemState(battery, GOOD)]
        bad = policy.exit_probs[SystemState(battery, BAD)]
        print(f"  b={battery:3d}  {good:.4f}  {bad:.4f}")
    if oracle_check:
        oracle = brute_force_oracle(model, reference)
        diff = abs(oracle.gain - solution.gain)
        print(f"oracle gain: {oracle.gain:.12f} (difference {diff:.3e})")
        if diff > 1e-9:
            raise SolverConvergenceError(
                f"policy iteration gain {solution.gain} disagrees with oracle gain {oracle.gain}"
            )
        print("oracle check: OK")


def _build_controllers(cfg: ExperimentConfig) -> list:
    controllers = []
    params = cfg.energy
    needs_policy = {"oncc", "cc"} & set(cfg.controllers.enabled)
    policy = None
    if needs_policy:
        policy = read_policy_csv(_require(cfg.output_dir / FILE_POLICY, "fit"), params)
    for name in cfg.controllers.enabled:
        if name == "always_exit":
            controllers.append(AlwaysExitController(params.cost_exit, params.cost_continue))
        elif name == "always_continue":
            controllers.append(
                AlwaysContinueController(
                    params.cost_exit, params.cost_continue, cfg.controllers.alc_exit_fallback
                )
            )
        elif name == "eao":
            controllers.append(EaoController(params.cost_exit, params.cost_continue))
        elif name == "oncc":
            controllers.append(OnccController(policy))
        elif name == "cc":
            fits = read_predictor_csv(_require(cfg.output_dir / FILE_PREDICTOR, "fit"))
            predictors = predictors_from_table(policy, fits)
            controllers.append(CcController(predictors, params.cost_exit, params.cost_continue))
    return controllers


def cmd_simulate(config_path) -> None:
    """Run every enabled controller over the test split and write the
    per-episode, trajectory, and summary files."""
    cfg = load_config(config_path)
    test = ingest_csv(
        _require(cfg.output_dir / FILE_TRACE_TEST, "gen-trace"), cfg.trace.num_classes
    )
    controllers = _build_controllers(cfg)
    results = run_suite(controllers, TraceSplits(est=[], nb=[], test=test), cfg.energy, cfg.sim)
    for name, agg in results.items():
        write_episode_csv(cfg.output_dir / f"episodes_{name}.csv", agg)
        write_trajectory_csv(cfg.output_dir / f"trajectory_{name}.csv", agg)
    write_summary_csv(cfg.output_dir / FILE_SUMMARY, results)
    rate = average_energy_rate(cfg.energy)
    print(f"simulated {cfg.sim.num_episodes} episodes x {cfg.sim.horizon} slots per controller")
    print(f"{'controller':<16} {'alpha':>8} {'rho':>8} {'tau':>8} {'energy/slot':>12}")
    for name, agg in results.items():
        series = cumulative_energy_series(agg.episodes[0], cfg.energy)
        per_slot = agg.cum_energy_mean[-1] / cfg.sim.horizon
        print(
            f"{name:<16} {agg.means['alpha']:8.4f} {agg.means['rho']:8.4f}"
            f" {agg.means['tau']:8.4f} {per_slot:12.4f}"
        )
        del series  # reference lines are in the trajectory CSVs
    print(f"incoming energy rate: {rate:.4f} quanta/slot")
    print(f"wrote {FILE_SUMMARY} and per-controller files to {cfg.output_dir}")


def _format_pm(mean: float, ci: float) -> str:
    return f"{mean:.4f} ± {ci:.4f}"


def cmd_report(config_path) -> None:
    """Render the summary as markdown with relative-improvement lines and a
    consistency audit of the per-episode files."""
    cfg = load_config(config_path)
    rows = read_summary_csv(_require(cfg.output_dir / FILE_SUMMARY, "simulate"))
    by_name = {r["controller"]: r for r in rows}
    lines = ["# Controller comparison", ""]
    lines.append("| controller | effective accuracy α | accuracy ϱ | service rate τ |")
    lines.append("| --- | --- | --- | --- |")
    for r in rows:
        lines.append(
            f"| {r['controller']} | {_format_pm(r['alpha_mean'], r['alpha_ci'])} "
            f"| {_format_pm(r['rho_mean'], r['rho_ci'])} "
            f"| {_format_pm(r['tau_mean'], r['tau_ci'])} |"
        )
    lines.append("")
    if "cc" in by_name and "always_exit" in by_name:
        base = by_name["always_exit"]["rho_mean"]
        gain = (by_name["cc"]["rho_mean"] - base) / base * 100.0
        lines.append(f"- cc accuracy vs always_exit: {gain:+.1f}%")
    if "cc" in by_name and "always_continue" in by_name:
        base = by_name["always_continue"]["alpha_mean"]
        gain = (by_name["cc"]["alpha_mean"] - base) / base * 100.0
        lines.append(f"- cc effective accuracy vs always_continue: {gain:+.1f}%")
    audit_failures = []
    checked = 0
    for r in rows:
        episodes = read_episode_csv(
            _require(cfg.output_dir / f"episodes_{r['controller']}.csv", "simulate")
        )
        for e in episodes:
            checked += 1
            if abs(e["alpha"] - e["rho"] * e["tau"]) > 1e-9:
                audit_failures.append(f"{r['controller']} episode {e['episode']}")
    if audit_failures:
        lines.append(f"- WARNING: effective-accuracy identity fails for: {', '.join(audit_failures)}")
    else:
        lines.append(f"- effective-accuracy identity α = ϱτ: OK ({checked} episodes checked)")
    report = "\n".join(lines) + "\n"
    report_path = cfg.output_dir / FILE_REPORT
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report)
    print(report, end="")
    print(f"wrote {report_path}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eectl",
        description="Energy-aware early-exit policies: generate traces, fit, simulate, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-trace", "generate or ingest a confidence trace and write the split files"),
        ("calibrate", "temperature-scale a logit file into calibrated trace splits"),
        ("fit", "solve the exit policy and fit the exit predictors"),
        ("simulate", "run the enabled controllers over the test split"),
        ("report", "render the result summary as markdown"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="path to the TOML experiment config")
        if name == "fit":
            cmd.add_argument(
                "--oracle-check",
                action="store_true",
                help="cross-check the solver against exhaustive enumeration (small instances only)",
            )
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-trace":
            cmd_gen_trace(args.config)
        elif args.command == "calibrate":
            cmd_calibrate(args.config)
        elif args.command == "fit":
            cmd_fit(args.config, oracle_check=args.oracle_check)
        elif args.command == "simulate":
            cmd_simulate(args.config)
        elif args.command == "report":
            cmd_report(args.config)
    except (ConfigValidationError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (
        UnichainViolationError,
        SolverConvergenceError,
        EnumerationLimitError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
