"""Direct optimization of the two relative-depth fields and the finite-difference gradient check."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from errors import DivergedOptimizationError, InvalidInputError, NumericalFailure
from losses import LossBreakdown, LossWeights, ScenePair, evaluate
from scale import scale_transform

Gradients = tuple[np.ndarray, np.ndarray]

# share of checked gradient entries that must stay under the threshold
PASS_FRACTION = 0.99


def lr_schedule(iteration: int, max_iterations: int, initial_lr: float) -> float:
    """Polynomial decay initial_lr * (1 - iteration / max_iterations) ** 0.9."""
    if max_iterations < 1:
        raise InvalidInputError(f"max_iterations must be at least 1, got {max_iterations}")
    if not 0 <= iteration <= max_iterations:
        raise InvalidInputError(f"iteration {iteration} outside [0, {max_iterations}]")
    return initial_lr * (1.0 - iteration / max_iterations) ** 0.9


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise InvalidInputError(f"Adam moments differ in shape: {self.m.shape} vs {self.v.shape}")
        if self.step < 0:
            raise InvalidInputError(f"Adam step must be non-negative, got {self.step}")

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> AdamState:
        return cls(np.zeros(shape), np.zeros(shape))


def adam_step(state: AdamState, rel_field: np.ndarray, gradient: np.ndarray, lr: float) -> tuple[np.ndarray, AdamState]:
    if rel_field.shape != state.m.shape or gradient.shape != rel_field.shape:
        raise InvalidInputError(
            f"Adam shapes disagree: field {rel_field.shape}, gradient {gradient.shape}, moments {state.m.shape}"
        )
    if not np.all(np.isfinite(gradient)):
        raise DivergedOptimizationError("Non-finite gradient entry")
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * gradient
    v = state.beta2 * state.v + (1 - state.beta2) * gradient * gradient
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    updated = rel_field - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(updated)):
        raise DivergedOptimizationError("Adam update produced a non-finite field entry")
    return updated, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


@dataclass
class OptimConfig:
    max_iterations: int = 2000
    initial_lr: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    record_every: int = 100

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not np.isfinite(self.initial_lr) or self.initial_lr <= 0:
            raise InvalidInputError(f"initial_lr must be positive, got {self.initial_lr}")
        if self.record_every < 1:
            raise InvalidInputError(f"record_every must be at least 1, got {self.record_every}")


@dataclass
class TrajectoryRecord:
    iteration: int
    lr: float
    breakdown: LossBreakdown


def trajectory_header(trajectory: list[TrajectoryRecord]) -> list[str]:
    if not trajectory:
        return ["iteration", "lr", "total"]
    return ["iteration", "lr", *trajectory[0].breakdown.column_names(), "total"]


def trajectory_rows(trajectory: list[TrajectoryRecord]) -> list[list]:
    return [[r.iteration, float(r.lr), *r.breakdown.column_values(), float(r.breakdown.total)] for r in trajectory]


@dataclass
class OptimResult:
    fields: Gradients
    depths: Gradients
    trajectory: list[TrajectoryRecord]

    @property
    def final(self) -> LossBreakdown:
        return self.trajectory[-1].breakdown


def optimize(
    pair: ScenePair,
    config: OptimConfig,
    initial_fields: Optional[Gradients] = None,
    progress: bool = True,
) -> OptimResult:
    """Adam on both relative-depth fields, starting from zero (depth = mu) unless given."""
    weights = config.weights
    mus = (pair.mu1.value, pair.mu2.value) if weights.scale_transform else (1.0, 1.0)
    if initial_fields is None:
        fields = [np.zeros(pair.shape), np.zeros(pair.shape)]
        for view, (f, mu) in enumerate(zip(fields, mus), start=1):
            if not np.array_equal(scale_transform(f, mu), np.full(pair.shape, mu)):
                raise NumericalFailure(f"Zero field of view {view} does not map to the median depth")
    else:
        fields = [np.array(f, dtype=np.float64) for f in initial_fields]
    states = [AdamState.zeros(pair.shape), AdamState.zeros(pair.shape)]
    trajectory: list[TrajectoryRecord] = []

    bar = tqdm(range(config.max_iterations + 1), desc="optimize", disable=not progress, leave=False)
    for it in bar:
        lr = lr_schedule(it, config.max_iterations, config.initial_lr)
        last = it == config.max_iterations
        result = evaluate(pair, fields[0], fields[1], weights, with_gradient=not last)
        total = result.breakdown.total
        if not np.isfinite(total):
            raise DivergedOptimizationError(f"Non-finite loss at iteration {it}", trajectory)
        if it % config.record_every == 0 or last:
            trajectory.append(TrajectoryRecord(it, lr, result.breakdown))
            bar.set_postfix(loss=f"{total:.6g}")
            logging.debug(f"iteration {it}: lr {lr:.3g}, total loss {total:.10g}")
        if last:
            break
        assert result.gradients is not None
        try:
            for view in range(2):
                fields[view], states[view] = adam_step(states[view], fields[view], result.gradients[view], lr)
        except DivergedOptimizationError as e:
            raise DivergedOptimizationError(f"{e} at iteration {it}", trajectory) from None

    depths = (scale_transform(fields[0], mus[0]), scale_transform(fields[1], mus[1]))
    logging.info(
        f"Optimized {config.max_iterations} iterations: total loss "
        f"{trajectory[0].breakdown.total:.6g} -> {trajectory[-1].breakdown.total:.6g}"
    )
    return OptimResult((fields[0], fields[1]), depths, trajectory)


# --- gradient check ---


@dataclass
class GradEntry:
    view: int  # 1 or 2
    row: int
    col: int
    analytic: float
    numeric: float
    rel_error: float
    # the +-step perturbation crossed a point where the loss is not differentiable
    straddles: bool


@dataclass
class GradCheckReport:
    entries: list[GradEntry]
    threshold: float
    step: float

    @property
    def checked(self) -> list[GradEntry]:
        return [e for e in self.entries if not e.straddles]

    @property
    def flagged(self) -> list[GradEntry]:
        return [e for e in self.entries if e.straddles]

    @property
    def max_error(self) -> float:
        return max((e.rel_error for e in self.checked), default=0.0)

    @property
    def mean_error(self) -> float:
        checked = self.checked
        return float(np.mean([e.rel_error for e in checked])) if checked else 0.0

    @property
    def offending(self) -> list[GradEntry]:
        return [e for e in self.checked if e.rel_error >= self.threshold]

    @property
    def within_fraction(self) -> float:
        checked = self.checked
        if not checked:
            return 1.0
        return 1.0 - len(self.offending) / len(checked)

    @property
    def passed(self) -> bool:
        return self.within_fraction >= PASS_FRACTION

    def summary(self) -> str:
        lines = [
            f"checked {len(self.checked)} entries (step {self.step:g}), {len(self.flagged)} flagged as crossing a non-differentiable point",
            f"max relative error  {self.max_error:.3e}",
            f"mean relative error {self.mean_error:.3e}",
            f"within threshold    {100 * self.within_fraction:.1f}% (need {100 * PASS_FRACTION:g}%)",
            f"threshold           {self.threshold:.3e}: {'PASS' if self.passed else 'FAIL'}",
        ]
        for e in self.offending:
            lines.append(
                f"  field {e.view} (u={e.col}, v={e.row}): analytic {e.analytic:.10e}, "
                f"numeric {e.numeric:.10e}, rel {e.rel_error:.3e}"
            )
        return "\n".join(lines)

    csv_header = ["view", "row", "col", "analytic", "numeric", "rel_error", "straddles"]

    def csv_rows(self) -> list[list]:
        return [
            [e.view, e.row, e.col, float(e.analytic), float(e.numeric), float(e.rel_error), int(e.straddles)]
            for e in self.entries
        ]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-10)


def _same_lattice(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_check(
    pair: ScenePair,
    fields: Gradients,
    weights: LossWeights,
    step: float = 1e-4,
    sample_count: int = 64,
    seed: int = 0,
    threshold: float = 1e-5,
    gradient_hook: Optional[Callable[[Gradients], Gradients]] = None,
) -> GradCheckReport:
    """Central differences of the total loss on a seeded subset of entries against the analytic gradient.

    The adaptive smoothness weights are frozen at the evaluation point, matching the
    analytic gradient which treats them as constants.
    """
    if not step > 0:
        raise InvalidInputError(f"Finite-difference step must be positive, got {step}")
    if sample_count < 1:
        raise InvalidInputError(f"sample_count must be at least 1, got {sample_count}")
    base_fields = [np.array(f, dtype=np.float64) for f in fields]
    base = evaluate(pair, base_fields[0], base_fields[1], weights)
    assert base.gradients is not None
    gradients = base.gradients if gradient_hook is None else gradient_hook(base.gradients)

    height, width = pair.shape
    size = height * width
    rng = np.random.default_rng(seed)
    picks = rng.choice(2 * size, size=min(sample_count, 2 * size), replace=False)

    entries = []
    for flat in picks:
        view, pixel = divmod(int(flat), size)
        row, col = divmod(pixel, width)
        values = []
        straddles = False
        for sign in (1.0, -1.0):
            probe = [f.copy() for f in base_fields]
            probe[view][row, col] += sign * step
            result = evaluate(pair, probe[0], probe[1], weights, frozen_alphas=base.alphas, with_gradient=False)
            values.append(result.breakdown.total)
            straddles |= not _same_lattice(base.lattice, result.lattice)
        numeric = (values[0] - values[1]) / (2 * step)
        analytic = float(gradients[view][row, col])
        entries.append(
            GradEntry(view + 1, row, col, analytic, numeric, relative_error(analytic, numeric), straddles)
        )
    report = GradCheckReport(entries, threshold, step)
    logging.info(
        f"Gradient check: max relative error {report.max_error:.3e} over {len(report.checked)} entries, "
        f"{len(report.flagged)} flagged"
    )
    return report
