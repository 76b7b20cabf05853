"""Multi-sample SPSA gradient estimation under a hard query budget.

One estimate averages N two-point central differences:

    g_hat = (1/N) sum_n [f(x + c z_n) - f(x - c z_n)] / (2c) * inv(z_n)

where z_n = a * signs with one shared magnitude a ~ Uniform(0, 1] and
independent signs in {-1, +1}.  Storing the direction as (a, signs)
keeps the elementwise reciprocal exact: inv(z) = signs / a, so the
magnitude cancels as a/a = 1 and each sign squares to 1.  The estimator
only ever multiplies by inv(z); it never divides by z.

Every objective evaluation costs exactly one query on the ledger, and an
estimate is all-or-nothing: it either gets its full 2N evaluations or
raises before spending anything.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, DimensionError
from . import seeding


@dataclass
class QueryLedger:
    """Counts objective evaluations against a hard budget.

    ``budget=None`` turns the ledger into a pure meter (used for
    accuracy passes, which are accounted separately from training).
    Charging is atomic so concurrent evaluation workers cannot
    overdraw.
    """

    budget: int | None
    used: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False,
                                  compare=False)

    @property
    def remaining(self) -> int | None:
        if self.budget is None:
            return None
        return self.budget - self.used

    def can_afford(self, n: int) -> bool:
        return self.budget is None or self.used + n <= self.budget

    def charge(self, n: int = 1) -> None:
        with self._lock:
            if not self.can_afford(n):
                raise BudgetExceededError(remaining=self.budget - self.used,
                                          requested=n)
            self.used += n


@dataclass(frozen=True)
class PerturbationDirection:
    """One direction z = magnitude * signs, with signs in {-1, +1}.

    The reciprocal direction is signs / magnitude.  Exactness of
    z * inv(z) holds in this representation because signs * signs == 1
    and magnitude / magnitude == 1 in floating point; the materialized
    elementwise product can be off by one ulp and is never formed.
    """

    magnitude: float
    signs: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.magnitude <= 1.0):
            raise ValueError(f"magnitude must be in (0, 1], got {self.magnitude}")
        self.signs.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.signs.shape[0]

    @property
    def z(self) -> np.ndarray:
        return self.magnitude * self.signs

    @property
    def z_inv(self) -> np.ndarray:
        return self.signs / self.magnitude


class PerturbationStream:
    """Counter-seeded perturbations for one training step.

    The n-th draw depends only on (base_seed, step_index, n), never on
    how many other draws happened or on which thread asks, so resumed
    and parallel runs see identical directions.
    """

    def __init__(self, base_seed: int, step_index: int, dim: int):
        if dim < 1:
            raise DimensionError(f"dimension must be positive, got {dim}")
        self.base_seed = base_seed
        self.step_index = step_index
        self.dim = dim
        self._next = 0

    def direction_at(self, sample_index: int) -> PerturbationDirection:
        gen = seeding.rng(self.base_seed, "perturb", self.step_index, sample_index)
        magnitude = gen.random()
        while magnitude == 0.0:  # open interval: resample the measure-zero draw
            magnitude = gen.random()
        signs = (gen.integers(0, 2, size=self.dim) * 2 - 1).astype(np.float64)
        return PerturbationDirection(magnitude=magnitude, signs=signs)

    def sample(self) -> PerturbationDirection:
        d = self.direction_at(self._next)
        self._next += 1
        return d


def sample_perturbation(stream: PerturbationStream) -> PerturbationDirection:
    """Next direction from the stream."""
    return stream.sample()


@dataclass(frozen=True)
class GradientEstimate:
    """Result of one N-sample estimate.

    ``loss_mean`` is the mean of the 2N perturbed losses; the optimizer
    records it as the step's training loss so tracing costs no extra
    queries.  ``per_sample`` holds the N single-sample estimates when
    the caller asked to retain them.
    """

    g_hat: np.ndarray
    queries_charged: int
    loss_mean: float
    per_sample: tuple[np.ndarray, ...] | None = None


def _pair_points(x: np.ndarray, direction: PerturbationDirection, c: float):
    z = direction.z
    return x + c * z, x - c * z


def spsa_sample(objective, x, direction: PerturbationDirection, c: float, batch=None):
    """Single two-point estimate along one direction.

    ``objective`` must expose ``loss(x, batch)`` and a ``ledger``; both
    evaluations see the same batch.
    """
    ledger = objective.ledger
    if not ledger.can_afford(2):
        raise BudgetExceededError(remaining=ledger.remaining, requested=2)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (direction.dim,):
        raise DimensionError(
            f"point has shape {x.shape}, direction has dimension {direction.dim}"
        )
    plus, minus = _pair_points(x, direction, c)
    f_plus = objective.loss(plus, batch)
    f_minus = objective.loss(minus, batch)
    scale = (f_plus - f_minus) / (2.0 * c)
    return scale * direction.z_inv


def n_spsa(
    objective,
    x: np.ndarray,
    c: float,
    n_samples: int,
    stream: PerturbationStream,
    batch=None,
    retain_samples: bool = False,
    pool: ThreadPoolExecutor | None = None,
) -> GradientEstimate:
    """Average N independent two-point estimates at the same point.

    All-or-nothing on the budget: raises ``BudgetExceededError`` with the
    remaining count before any evaluation if fewer than 2N queries are
    left.  With a thread pool the 2N evaluations run concurrently, but
    per-sample results are reduced in sample order, so the numeric output
    is identical to the serial one.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if c <= 0.0:
        raise ValueError(f"perturbation scale must be positive, got {c}")
    need = 2 * n_samples
    ledger = objective.ledger
    if not ledger.can_afford(need):
        raise BudgetExceededError(remaining=ledger.remaining, requested=need)
    x = np.asarray(x, dtype=np.float64)

    directions = [stream.sample() for _ in range(n_samples)]
    points = []
    for d in directions:
        if x.shape != (d.dim,):
            raise DimensionError(
                f"point has shape {x.shape}, direction has dimension {d.dim}"
            )
        points.extend(_pair_points(x, d, c))

    if pool is None:
        losses = [objective.loss(pt, batch) for pt in points]
    else:
        losses = list(pool.map(lambda pt: objective.loss(pt, batch), points))

    per_sample = []
    acc = np.zeros_like(x)
    for n, d in enumerate(directions):
        scale = (losses[2 * n] - losses[2 * n + 1]) / (2.0 * c)
        g_n = scale * d.z_inv
        acc += g_n
        if retain_samples:
            per_sample.append(g_n)
    g_hat = acc / n_samples
    return GradientEstimate(
        g_hat=g_hat,
        queries_charged=need,
        loss_mean=float(np.mean(losses)),
        per_sample=tuple(per_sample) if retain_samples else None,
    )
