"""Confidence traces: synthetic generation, CSV ingestion, temperature
calibration, dataset splitting, and the empirical distribution of the
confidence gap between the final and early exits.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRACE_HEADER = ("z_e", "z_c", "correct_e", "correct_c")

_TEMPERATURE_RANGE = (0.05, 20.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class TraceFormatError(ValueError):
    """A trace or logit file is malformed or out of range."""


@dataclass(frozen=True, slots=True)
class ConfidenceSample:
    """Per-sample side information: max-softmax confidence and correctness
    at the early and final exits.
    """

    conf_early: float
    conf_final: float
    correct_early: bool
    correct_final: bool

    @property
    def gap(self) -> float:
        """Confidence gained by running the full model on this sample."""
        return self.conf_final - self.conf_early


@dataclass(frozen=True)
class LogitRecord:
    """Raw per-sample logits of both exits plus the true label."""

    logits_early: np.ndarray
    logits_final: np.ndarray
    label: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "logits_early", np.asarray(self.logits_early, dtype=float))
        object.__setattr__(self, "logits_final", np.asarray(self.logits_final, dtype=float))
        n = self.logits_early.shape[0]
        if n < 2 or self.logits_final.shape[0] != n:
            raise ValueError("both logit vectors must share a length of at least 2")
        if not 0 <= self.label < n:
            raise ValueError(f"label {self.label} outside [0, {n})")


@dataclass(frozen=True)
class TraceSplits:
    """Disjoint sample partitions for estimation, predictor fitting, and testing."""

    est: list
    nb: list
    test: list


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of the synthetic trace.

    Confidences are Beta-distributed on [1/num_classes, 1] with exact
    target means, and correctness bits are Bernoulli in the confidences,
    so the trace is calibrated by construction and realized accuracies
    concentrate on the targets. On average the final exit recovers a
    fixed fraction of the early exit's confidence shortfall, chosen so
    the final-confidence mean hits ``acc_final`` exactly; this makes the
    confidence gap shrink as the early exit gets more confident.
    ``final_concentration`` controls how tightly the final confidence
    hugs that curve (the early/final correlation knob); lower values
    widen the gap spread and yield more negative-gap samples where the
    full model is less confident than the early exit.
    ``correctness_coupling`` is the probability that the two correctness
    bits of a sample share one uniform draw instead of independent ones.
    """

    num_classes: int = 10
    acc_early: float = 0.76
    acc_final: float = 0.93
    early_concentration: float = 3.0
    final_concentration: float = 25.0
    correctness_coupling: float = 0.0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        floor = 1.0 / self.num_classes
        if self.acc_early < floor:
            raise ValueError(f"acc_early {self.acc_early} below the uniform-confidence floor {floor}")
        if self.acc_early > self.acc_final:
            raise ValueError("acc_early must not exceed acc_final")
        if self.acc_final > 1.0:
            raise ValueError("acc_final must not exceed 1")
        if not self.early_concentration > 0.0 or not self.final_concentration > 0.0:
            raise ValueError("concentrations must be positive")
        if not 0.0 <= self.correctness_coupling <= 1.0:
            raise ValueError("correctness_coupling must be a probability")


def _mean_beta(rng: np.random.Generator, means: np.ndarray, concentration: float, floor: float) -> np.ndarray:
    """Beta draws rescaled to [floor, 1] whose means equal ``means`` exactly."""
    span = 1.0 - floor
    unit = np.clip((np.asarray(means, dtype=float) - floor) / span, 0.0, 1.0)
    if math.isinf(concentration):
        return floor + span * unit
    a = unit * concentration
    b = (1.0 - unit) * concentration
    out = np.empty_like(unit)
    at_floor = a < 1e-9
    at_ceiling = b < 1e-9
    mid = ~(at_floor | at_ceiling)
    out[at_floor] = floor
    out[at_ceiling] = 1.0
    out[mid] = floor + span * rng.beta(a[mid], b[mid])
    return out


def generate_synthetic(n: int, gen: GeneratorConfig, rng: np.random.Generator) -> list[ConfidenceSample]:
    """Draw ``n`` calibrated confidence samples.

    Draw order is fixed: early-confidence block, final-confidence block,
    shared correctness block, coupling selectors, then the two fresh
    correctness blocks, so a seed pins the whole trace.
    """
    if n < 1:
        raise ValueError("n must be positive")
    floor = 1.0 / gen.num_classes
    conf_early = _mean_beta(
        rng, np.full(n, gen.acc_early), gen.early_concentration, floor
    )
    if gen.acc_early < 1.0:
        shortfall_kept = (1.0 - gen.acc_final) / (1.0 - gen.acc_early)
    else:
        shortfall_kept = 0.0
    final_means = 1.0 - shortfall_kept * (1.0 - conf_early)
    conf_final = _mean_beta(rng, final_means, gen.final_concentration, floor)
    shared = rng.random(n)
    use_shared = rng.random(n) < gen.correctness_coupling
    draw_early = np.where(use_shared, shared, rng.random(n))
    draw_final = np.where(use_shared, shared, rng.random(n))
    correct_early = draw_early < conf_early
    correct_final = draw_final < conf_final
    return [
        ConfidenceSample(
            float(conf_early[i]),
            float(conf_final[i]),
            bool(correct_early[i]),
            bool(correct_final[i]),
        )
        for i in range(n)
    ]


def split(samples: list, fractions: tuple[float, float, float], rng: np.random.Generator) -> TraceSplits:
    """Random disjoint partition into (est, nb, test).

    The first two sizes are rounded down; the remainder goes to test.
    """
    f_est, f_nb, f_test = fractions
    if min(f_est, f_nb, f_test) < 0.0:
        raise ValueError("split fractions must be non-negative")
    if abs(f_est + f_nb + f_test - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = len(samples)
    order = rng.permutation(n)
    n_est = int(f_est * n + 1e-9)
    n_nb = int(f_nb * n + 1e-9)
    est = [samples[i] for i in order[:n_est]]
    nb = [samples[i] for i in order[n_est : n_est + n_nb]]
    test = [samples[i] for i in order[n_est + n_nb :]]
    return TraceSplits(est=est, nb=nb, test=test)


def emit_csv(path, samples: list) -> None:
    """Write samples in the canonical trace format (6-decimal confidences,
    0/1 flags, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        for s in samples:
            fh.write(
                f"{s.conf_early:.6f},{s.conf_final:.6f},"
                f"{int(s.correct_early)},{int(s.correct_final)}\n"
            )


def ingest_csv(path, num_classes: int = 10) -> list[ConfidenceSample]:
    """Parse a trace CSV, rejecting malformed rows and out-of-range confidences."""
    path = Path(path)
    floor = 1.0 / num_classes
    samples: list[ConfidenceSample] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(TRACE_HEADER):
            raise TraceFormatError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise TraceFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                conf_early = float(row[0])
                conf_final = float(row[1])
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: non-numeric confidence") from None
            if row[2] not in ("0", "1") or row[3] not in ("0", "1"):
                raise TraceFormatError(f"{path}:{lineno}: correctness flags must be 0 or 1")
            for name, value in (("z_e", conf_early), ("z_c", conf_final)):
                if not floor <= value <= 1.0:
                    raise TraceFormatError(
                        f"{path}:{lineno}: {name}={value} outside [{floor}, 1]"
                    )
            samples.append(
                ConfidenceSample(conf_early, conf_final, row[2] == "1", row[3] == "1")
            )
    if not samples:
        raise TraceFormatError(f"{path}: no data rows")
    return samples


def _logit_header(num_classes: int) -> list[str]:
    return (
        ["label"]
        + [f"logits_e_{i}" for i in range(num_classes)]
        + [f"logits_c_{i}" for i in range(num_classes)]
    )


def write_logit_csv(path, records: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        num_classes = records[0].logits_early.shape[0]
        fh.write(",".join(_logit_header(num_classes)) + "\n")
        for r in records:
            values = [str(r.label)]
            values += [f"{v:.17g}" for v in r.logits_early]
            values += [f"{v:.17g}" for v in r.logits_final]
            fh.write(",".join(values) + "\n")


def read_logit_csv(path) -> list[LogitRecord]:
    """Parse a logit CSV; the class count is inferred from the header."""
    path = Path(path)
    records: list[LogitRecord] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or (len(header) - 1) % 2 != 0:
            raise TraceFormatError(f"{path}: malformed logit header")
        num_classes = (len(header) - 1) // 2
        if header != _logit_header(num_classes):
            raise TraceFormatError(f"{path}: malformed logit header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 1 + 2 * num_classes:
                raise TraceFormatError(f"{path}:{lineno}: expected {1 + 2 * num_classes} fields")
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: non-numeric field") from None
            try:
                records.append(
                    LogitRecord(
                        np.array(values[:num_classes]),
                        np.array(values[num_classes:]),
                        label,
                    )
                )
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise TraceFormatError(f"{path}: no data rows")
    return records


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def _mean_nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(scaled).sum(axis=1))
    picked = scaled[np.arange(labels.size), labels]
    return float(np.mean(log_norm - picked))


def _stack_head(records: list, head: str) -> np.ndarray:
    if head == "early":
        return np.stack([r.logits_early for r in records])
    if head == "final":
        return np.stack([r.logits_final for r in records])
    raise ValueError(f"unknown head {head!r}")


def temperature_scale(records: list, head: str = "early") -> float:
    """Temperature minimizing the mean NLL of the chosen head's softmax.

    Golden-section search on log-temperature over [0.05, 20]; the NLL is
    convex in the inverse temperature, so a unimodal line search finds the
    global minimum. Scaling by a positive temperature never changes a
    record's argmax class.
    """
    if not records:
        raise ValueError("no logit records")
    logits = _stack_head(records, head)
    labels = np.array([r.label for r in records])
    a, b = (math.log(t) for t in _TEMPERATURE_RANGE)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _mean_nll(logits, labels, math.exp(c))
    fd = _mean_nll(logits, labels, math.exp(d))
    for _ in range(90):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _mean_nll(logits, labels, math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _mean_nll(logits, labels, math.exp(d))
    return math.exp((a + b) / 2.0)


def apply_temperature(records: list, temp_early: float, temp_final: float) -> list[ConfidenceSample]:
    """Convert logit records into confidence samples under the given temperatures."""
    if not records:
        raise ValueError("no logit records")
    early = _softmax(_stack_head(records, "early") / temp_early)
    final = _softmax(_stack_head(records, "final") / temp_final)
    labels = np.array([r.label for r in records])
    return [
        ConfidenceSample(
            float(early[i].max()),
            float(final[i].max()),
            bool(early[i].argmax() == labels[i]),
            bool(final[i].argmax() == labels[i]),
        )
        for i in range(len(records))
    ]


@dataclass(frozen=True)
class GapDistribution:
    """Empirical law of the final-minus-early confidence gap."""

    sorted_gaps: np.ndarray

    @property
    def support_lo(self) -> float:
        return float(self.sorted_gaps[0])

    @property
    def support_hi(self) -> float:
        return float(self.sorted_gaps[-1])

    def cdf(self, threshold):
        """P[gap <= threshold]: a right-continuous step function with
        inclusive atoms. Accepts scalars or arrays."""
        position = np.searchsorted(self.sorted_gaps, threshold, side="right")
        return position / self.sorted_gaps.size


def build_gap_distribution(samples: list) -> GapDistribution:
    """Sorted empirical gap distribution over the given samples."""
    if not samples:
        raise ValueError("no samples")
    gaps = np.sort(np.array([s.gap for s in samples], dtype=float))
    return GapDistribution(sorted_gaps=gaps)
