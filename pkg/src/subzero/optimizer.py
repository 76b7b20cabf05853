"""Zeroth-order SGD with norm clipping, plus the matched baselines.

The update at step t is

    x <- x - eta_t * alpha_t * g_hat

with g_hat the N-sample two-point estimate, gains

    eta_t = a1 / (1 + t)^lr_decay,   c_t = c1 / (1 + t)^pm_decay,

and alpha_t = min(threshold / ||g_hat||, 1).  The default threshold is
sqrt(delta), the norm a unit-coordinate gradient would have in delta
dimensions; a sweep over thresholds delta^(k/10) is wired through the
``clip_threshold`` argument.

``run_training`` optimizes in a reparameterized subspace,
``run_naive_zo`` runs the same loop directly in the objective's native
space, and ``run_fo_sgd`` is the first-order reference.  All three are
bit-reproducible from (seed, config); the two zeroth-order entry points
share one loop so the standard variant without clipping is definitionally
identical to the naive runner.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BudgetExceededError, DimensionError, UnsupportedObjectiveError
from .estimator import PerturbationStream, QueryLedger, n_spsa
from .objectives import BatchSchedule, MeteredObjective, PromptSurrogateObjective, ReparamObjective
from .reparam import PromptShape, VariantKind, delta, flatten, init_intrinsic
from .transforms import per_token_projections


@dataclass(frozen=True)
class GainSchedule:
    """Step-size and perturbation gain sequences.

    Defaults sit at the middle of the tuning ranges that behave across
    the bundled benchmarks; decays of zero give constant gains.
    """

    a1: float = 0.01
    lr_decay: float = 0.5
    c1: float = 0.01
    pm_decay: float = 0.1

    def __post_init__(self):
        if self.a1 <= 0 or self.c1 <= 0:
            raise ValueError(f"gains must be positive, got a1={self.a1}, c1={self.c1}")
        if self.lr_decay < 0 or self.pm_decay < 0:
            raise ValueError("decay exponents must be non-negative")


def gains(schedule: GainSchedule, t: int) -> tuple[float, float]:
    """(step size, perturbation scale) at step t, counted from zero."""
    eta = schedule.a1 / (1.0 + t) ** schedule.lr_decay
    c = schedule.c1 / (1.0 + t) ** schedule.pm_decay
    return eta, c


def _clip_alpha(norm: float, threshold: float | None) -> float:
    if threshold is None or norm == 0.0:
        return 1.0
    return min(threshold / norm, 1.0)


def clip_coefficient(g_hat: np.ndarray, dim: int) -> float:
    """min(sqrt(dim)/||g_hat||, 1); a zero estimate is left unscaled."""
    return _clip_alpha(float(np.linalg.norm(g_hat)), math.sqrt(dim))


@dataclass(frozen=True)
class TraceRecord:
    """One optimization step as written to trace files."""

    step: int
    queries_used: int
    train_loss: float
    grad_norm: float
    alpha: float
    eval_accuracy: float | None = None


@dataclass
class OptimizerState:
    """Everything needed to continue a run: the point, the step counter,
    and both ledgers.  ``trace`` accumulates records since this state was
    created (a resumed state starts a fresh trace)."""

    x: np.ndarray
    step: int
    ledger: QueryLedger
    eval_ledger: QueryLedger
    seed: int
    trace: list[TraceRecord] = field(default_factory=list)


def zo_step(
    state: OptimizerState,
    objective,
    schedule: GainSchedule,
    n_samples: int,
    batch=None,
    clip_threshold: float | None = None,
    pool: ThreadPoolExecutor | None = None,
) -> TraceRecord:
    """One estimate-clip-update cycle.  Mutates ``state`` and appends the
    record.  On budget exhaustion the raised error carries ``state`` so the
    caller can checkpoint it."""
    eta, c = gains(schedule, state.step)
    stream = PerturbationStream(state.seed, state.step, state.x.shape[0])
    try:
        est = n_spsa(objective, state.x, c, n_samples, stream, batch=batch, pool=pool)
    except BudgetExceededError as err:
        err.state = state
        raise
    norm = float(np.linalg.norm(est.g_hat))
    alpha = _clip_alpha(norm, clip_threshold)
    state.x = state.x - (eta * alpha) * est.g_hat
    record = TraceRecord(
        step=state.step,
        queries_used=state.ledger.used,
        train_loss=est.loss_mean,
        grad_norm=norm,
        alpha=alpha,
    )
    state.step += 1
    state.trace.append(record)
    return record


def _attach_accuracy(state: OptimizerState, objective) -> None:
    if not state.trace or not getattr(objective, "has_accuracy", False):
        return
    if state.trace[-1].eval_accuracy is not None:
        return
    state.eval_ledger.charge(1)
    acc = objective.accuracy(state.x)
    state.trace[-1] = replace(state.trace[-1], eval_accuracy=acc)


def _zo_loop(
    metered,
    state: OptimizerState,
    schedule: GainSchedule,
    n_samples: int,
    clip_threshold: float | None,
    batch_size: int | None,
    eval_every: int | None,
    workers: int,
) -> OptimizerState:
    batches = BatchSchedule(metered.base, state.seed, batch_size)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while metered.ledger.can_afford(2 * n_samples):
            before = metered.ledger.used
            zo_step(
                state, metered, schedule, n_samples,
                batch=batches.batch_for(state.step),
                clip_threshold=clip_threshold, pool=pool,
            )
            if eval_every and (metered.ledger.used // eval_every) > (before // eval_every):
                _attach_accuracy(state, metered.base)
    finally:
        if pool is not None:
            pool.shutdown()
    _attach_accuracy(state, metered.base)
    return state


def run_training(
    objective,
    shape: PromptShape,
    variant: VariantKind,
    schedule: GainSchedule,
    n_samples: int,
    budget: int,
    seed: int,
    clip: bool = True,
    clip_threshold: float | None = None,
    eval_every: int | None = None,
    batch_size: int | None = 128,
    workers: int = 1,
    projection_kind: str = "fastfood",
    resume: OptimizerState | None = None,
) -> OptimizerState:
    """Train the variant's parameters with clipped zeroth-order SGD.

    A prompt-surrogate objective is optimized through per-token
    projections; any other objective must already live in the variant's
    parameter space (its dimension must equal delta(shape, variant)) and
    is optimized as a flat vector.  The run stops when the next estimate
    no longer fits the budget, which makes the step count
    floor(budget / 2N).
    """
    dim = delta(shape, variant)
    if isinstance(objective, PromptSurrogateObjective):
        projections = per_token_projections(
            seed, shape.m, shape.p, shape.q, kind=projection_kind
        )
        target = ReparamObjective(objective, shape, variant, projections)
    else:
        if objective.dim != dim:
            raise DimensionError(
                f"objective dimension {objective.dim} != delta={dim} for "
                f"{variant.value} on {shape}"
            )
        target = objective
    if clip_threshold is None and clip:
        clip_threshold = math.sqrt(dim)
    if resume is not None:
        state = resume
    else:
        state = OptimizerState(
            x=flatten(init_intrinsic(seed, shape, variant)),
            step=0,
            ledger=QueryLedger(budget),
            eval_ledger=QueryLedger(None),
            seed=seed,
        )
    metered = MeteredObjective(target, state.ledger)
    return _zo_loop(
        metered, state, schedule, n_samples, clip_threshold,
        batch_size, eval_every, workers,
    )


def run_naive_zo(
    objective,
    schedule: GainSchedule,
    n_samples: int,
    budget: int,
    seed: int,
    x0: np.ndarray | None = None,
    clip_threshold: float | None = None,
    eval_every: int | None = None,
    batch_size: int | None = 128,
    workers: int = 1,
    resume: OptimizerState | None = None,
) -> OptimizerState:
    """Unclipped zeroth-order SGD in the objective's native space."""
    if resume is not None:
        state = resume
    else:
        if x0 is None:
            x0 = objective.initial_point()
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (objective.dim,):
            raise DimensionError(
                f"x0 has shape {x0.shape}, objective dimension is {objective.dim}"
            )
        state = OptimizerState(
            x=x0.copy(), step=0,
            ledger=QueryLedger(budget), eval_ledger=QueryLedger(None),
            seed=seed,
        )
    metered = MeteredObjective(objective, state.ledger)
    return _zo_loop(
        metered, state, schedule, n_samples, clip_threshold,
        batch_size, eval_every, workers,
    )


def run_fo_sgd(
    objective,
    lr: float,
    steps: int,
    seed: int,
    x0: np.ndarray | None = None,
    batch_size: int | None = 128,
    eval_every: int | None = None,
) -> OptimizerState:
    """First-order minibatch SGD reference on the same batch schedule.

    Each record charges one query on the ledger, a bookkeeping convention
    that puts first-order traces on the same queries axis as zeroth-order
    ones.  The recorded loss is the batch loss at the pre-update point.
    """
    if not getattr(objective, "has_gradient", False):
        raise UnsupportedObjectiveError(
            "objective does not expose an analytic gradient"
        )
    if x0 is None:
        x0 = objective.initial_point()
    state = OptimizerState(
        x=np.asarray(x0, dtype=np.float64).copy(), step=0,
        ledger=QueryLedger(steps), eval_ledger=QueryLedger(None),
        seed=seed,
    )
    batches = BatchSchedule(objective, seed, batch_size)
    for t in range(steps):
        batch = batches.batch_for(t)
        loss = objective.loss(state.x, batch)
        grad = objective.gradient(state.x, batch)
        state.ledger.charge(1)
        state.x = state.x - lr * grad
        state.trace.append(TraceRecord(
            step=t,
            queries_used=state.ledger.used,
            train_loss=loss,
            grad_norm=float(np.linalg.norm(grad)),
            alpha=1.0,
        ))
        state.step = t + 1
        if eval_every and state.ledger.used % eval_every == 0:
            _attach_accuracy(state, objective)
    _attach_accuracy(state, objective)
    return state


def save_state(path, state: OptimizerState) -> None:
    """Checkpoint the state as text; values round-trip exactly via repr."""
    lines = [
        "subzero-checkpoint v1",
        f"seed {state.seed}",
        f"step {state.step}",
        f"ledger {state.ledger.used} {state.ledger.budget}",
        f"eval_ledger {state.eval_ledger.used} {state.eval_ledger.budget}",
        f"values {state.x.size}",
    ]
    lines.extend(repr(float(v)) for v in state.x)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_budget(token: str) -> int | None:
    return None if token == "None" else int(token)


def load_state(path) -> OptimizerState:
    with open(path) as fh:
        lines = fh.read().strip().split("\n")
    if not lines or lines[0] != "subzero-checkpoint v1":
        raise ValueError(f"{path} is not a checkpoint file")
    seed = int(lines[1].split()[1])
    step = int(lines[2].split()[1])
    used, budget = lines[3].split()[1:]
    e_used, e_budget = lines[4].split()[1:]
    count = int(lines[5].split()[1])
    x = np.array([float(v) for v in lines[6:6 + count]])
    if x.size != count:
        raise ValueError(f"expected {count} values, found {x.size}")
    return OptimizerState(
        x=x, step=step,
        ledger=QueryLedger(_parse_budget(budget), used=int(used)),
        eval_ledger=QueryLedger(_parse_budget(e_budget), used=int(e_used)),
        seed=seed,
    )
