"""Synthetic black-box objectives with known analytic gradients.

Three families, all deterministic functions of their spec:

* ``quadratic``: 0.5 (x - x*)^T H (x - x*) with a seeded rotation and a
  geometric eigenvalue spectrum pinned at [1, condition].  The one
  objective whose minimum and gradient are known in closed form.
* ``softmax_regression``: multinomial logistic loss on seeded Gaussian
  class clusters.
* ``prompt_surrogate``: a frozen random two-layer network whose only
  trainable input is a per-token prompt matrix, mimicking prompt tuning
  against a black-box scorer.  Per-example first-layer features are
  precomputed so one loss evaluation is a single small matrix product.

Analytic gradients exist for all three (used by the first-order baseline
and by finite-difference integrity checks), but zeroth-order training
touches only ``loss``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, EvaluationError, UnsupportedObjectiveError
from . import seeding
from .reparam import (
    IntrinsicParams, PromptShape, VariantKind, delta, reconstruct_prompt, unflatten,
)
from .transforms import Projection

KINDS = ("quadratic", "softmax_regression", "prompt_surrogate")


@dataclass(frozen=True)
class Batch:
    """A minibatch handle.  ``indices=None`` means the full training set."""

    indices: np.ndarray | None
    tag: str

    def __post_init__(self):
        if self.indices is not None:
            self.indices.setflags(write=False)


FULL_BATCH = Batch(indices=None, tag="full")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Everything needed to rebuild an objective bit for bit.

    Fields irrelevant to ``kind`` are ignored: ``dim`` and ``condition``
    describe the quadratic; the classification fields describe the two
    data-driven objectives; ``token_dim``/``token_count``/``hidden``
    describe the surrogate's frozen network.
    """

    kind: str
    seed: int = 0
    dim: int = 64                 # quadratic
    condition: float = 10.0       # quadratic spectrum ratio
    n_classes: int = 8
    n_features: int = 16
    n_train: int = 512
    n_eval: int = 256
    noise: float = 0.5            # cluster noise scale
    class_sep: float = 3.0        # cluster mean scale
    token_dim: int = 64           # surrogate: ambient per-token dimension p
    token_count: int = 8          # surrogate: token slots m
    hidden: int = 64              # surrogate: frozen layer width
    ridge: float = 0.0            # surrogate: pull toward the base prompt
    ridge_radius: float = 0.0     # surrogate: 0 = quadratic pull everywhere

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")


def _make_clusters(spec: ObjectiveSpec, tag: str, n: int):
    """Balanced Gaussian class clusters; labels are i mod C by construction.

    Class means are shared between splits; only the noise draw differs.
    """
    means_gen = seeding.rng(spec.seed, "data", "means")
    means = spec.class_sep * means_gen.standard_normal(
        (spec.n_classes, spec.n_features)
    )
    gen = seeding.rng(spec.seed, "data", tag)
    labels = np.arange(n) % spec.n_classes
    points = means[labels] + spec.noise * gen.standard_normal((n, spec.n_features))
    return points, labels


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    # logits: (batch, classes)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def _softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=1, keepdims=True)


class QuadraticObjective:
    """Rotated quadratic bowl with condition number ``spec.condition``."""

    has_gradient = True
    has_accuracy = False

    def __init__(self, spec: ObjectiveSpec):
        if spec.dim < 1:
            raise DimensionError(f"quadratic dim must be positive, got {spec.dim}")
        self.spec = spec
        self.dim = spec.dim
        gen = seeding.rng(spec.seed, "quadratic")
        basis, _ = np.linalg.qr(gen.standard_normal((spec.dim, spec.dim)))
        self.eigenvalues = np.geomspace(1.0, spec.condition, spec.dim)
        self.hessian = (basis * self.eigenvalues) @ basis.T
        self.x_star = gen.standard_normal(spec.dim)

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, x: np.ndarray, batch: Batch | None = None) -> float:
        d = np.asarray(x, dtype=np.float64) - self.x_star
        return float(0.5 * d @ (self.hessian @ d))

    def gradient(self, x: np.ndarray, batch: Batch | None = None) -> np.ndarray:
        return self.hessian @ (np.asarray(x, dtype=np.float64) - self.x_star)

    def accuracy(self, x: np.ndarray, indices=None) -> float:
        raise UnsupportedObjectiveError("quadratic objective has no accuracy")

    def describe(self) -> dict:
        return {
            "kind": self.spec.kind,
            "dim": self.dim,
            "condition": self.spec.condition,
            "eig_min": float(self.eigenvalues[0]),
            "eig_max": float(self.eigenvalues[-1]),
            "min_value": 0.0,
        }


class SoftmaxRegressionObjective:
    """Linear softmax classifier on Gaussian clusters.

    Parameters are the C-by-F weight matrix flattened row-major.  At zero
    weights the loss is exactly ln C and, because logits tie at zero and
    argmax breaks ties toward the lowest class index, accuracy equals the
    class-0 frequency.
    """

    has_gradient = True
    has_accuracy = True

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec
        self.dim = spec.n_classes * spec.n_features
        self.x_train, self.y_train = _make_clusters(spec, "train", spec.n_train)
        self.x_eval, self.y_eval = _make_clusters(spec, "eval", spec.n_eval)
        self.n_train = spec.n_train

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _weights(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionError(f"expected shape ({self.dim},), got {x.shape}")
        return x.reshape(self.spec.n_classes, self.spec.n_features)

    def _select(self, batch: Batch | None):
        if batch is None or batch.indices is None:
            return self.x_train, self.y_train
        return self.x_train[batch.indices], self.y_train[batch.indices]

    def loss(self, x: np.ndarray, batch: Batch | None = None) -> float:
        xs, ys = self._select(batch)
        return _cross_entropy(xs @ self._weights(x).T, ys)

    def gradient(self, x: np.ndarray, batch: Batch | None = None) -> np.ndarray:
        xs, ys = self._select(batch)
        probs = _softmax(xs @ self._weights(x).T)
        probs[np.arange(len(ys)), ys] -= 1.0
        grad = probs.T @ xs / len(ys)
        return grad.reshape(self.dim)

    def accuracy(self, x: np.ndarray, indices=None) -> float:
        xs, ys = self.x_eval, self.y_eval
        if indices is not None:
            xs, ys = xs[indices], ys[indices]
        pred = np.argmax(xs @ self._weights(x).T, axis=1)
        return float(np.mean(pred == ys))

    def describe(self) -> dict:
        return {
            "kind": self.spec.kind,
            "dim": self.dim,
            "n_classes": self.spec.n_classes,
            "n_features": self.spec.n_features,
            "n_train": self.spec.n_train,
            "n_eval": self.spec.n_eval,
            "uniform_loss": math.log(self.spec.n_classes),
        }


class PromptSurrogateObjective:
    """Frozen random network scored through a trainable prompt matrix.

    The prompt is a p-by-m matrix flattened column-major (token by
    token).  A frozen first layer mixes the prompt with per-example
    features, a tanh and a frozen linear head produce class logits.  Only
    the prompt is trainable, so the loss landscape has the flavor of
    prompt tuning: a shared input shift steers a fixed scorer.

    ``spec.ridge`` adds a pull toward the base prompt.  Without it the
    network's finite width leaves most ambient directions exactly flat
    and the benchmark would understate the cost of searching a large
    space; the pull puts curvature everywhere, the way a real scorer
    penalizes wandering far from its operating point.  With
    ``spec.ridge_radius`` > 0 the pull is pseudo-Huber: quadratic with
    coefficient ridge/2 near the base, linear beyond the radius, so its
    gradient norm never exceeds ridge * radius and runaway trajectories
    plateau instead of overflowing.
    """

    has_gradient = True
    has_accuracy = True

    # Gains on the frozen weights; chosen so prompt gradients are O(1) at
    # the start, which puts clipping in play for the step-size sweeps.
    PROMPT_GAIN = 8.0
    HEAD_GAIN = 2.0

    def __init__(self, spec: ObjectiveSpec):
        self.spec = spec
        self.p = spec.token_dim
        self.m = spec.token_count
        self.dim = self.p * self.m
        self.x_train, self.y_train = _make_clusters(spec, "train", spec.n_train)
        self.x_eval, self.y_eval = _make_clusters(spec, "eval", spec.n_eval)
        self.n_train = spec.n_train

        gen = seeding.rng(spec.seed, "net")
        h, f, c = spec.hidden, spec.n_features, spec.n_classes
        self.w_prompt = gen.standard_normal((h, self.dim)) * (
            self.PROMPT_GAIN / math.sqrt(self.dim)
        )
        self.w_input = gen.standard_normal((h, f)) / math.sqrt(f)
        self.b_hidden = 0.1 * gen.standard_normal(h)
        self.w_head = gen.standard_normal((c, h)) * (self.HEAD_GAIN / math.sqrt(h))
        self.b_head = np.zeros(c)
        self.base_prompt = 0.1 * gen.standard_normal((self.p, self.m))

        # Per-example first-layer input, fixed for the life of the
        # objective; one loss evaluation then costs a single (h x pm)
        # matvec plus elementwise work on the batch.
        self._feat_train = self.w_input @ self.x_train.T + self.b_hidden[:, None]
        self._feat_eval = self.w_input @ self.x_eval.T + self.b_hidden[:, None]

    def initial_point(self) -> np.ndarray:
        return self.base_prompt.flatten(order="F")

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionError(f"expected shape ({self.dim},), got {x.shape}")
        return x

    def _forward(self, x: np.ndarray, feats: np.ndarray):
        shift = self.w_prompt @ x
        hidden = np.tanh(shift[:, None] + feats)
        logits = self.w_head @ hidden + self.b_head[:, None]
        return hidden, logits.T  # logits as (batch, classes)

    def _select(self, batch: Batch | None):
        if batch is None or batch.indices is None:
            return self._feat_train, self.y_train
        return self._feat_train[:, batch.indices], self.y_train[batch.indices]

    def _pull(self, x: np.ndarray) -> tuple[float, np.ndarray | None]:
        """Value and gradient of the base-prompt pull at x."""
        rho = self.spec.ridge
        if not rho:
            return 0.0, None
        off = x - self.initial_point()
        radius = self.spec.ridge_radius
        if not radius:
            return 0.5 * rho * float(off @ off), rho * off
        # pseudo-Huber: (rho r^2) (sqrt(1 + ||off||^2 / r^2) - 1)
        root = math.sqrt(1.0 + float(off @ off) / radius**2)
        return rho * radius**2 * (root - 1.0), (rho / root) * off

    def loss(self, x: np.ndarray, batch: Batch | None = None) -> float:
        x = self._check(x)
        feats, ys = self._select(batch)
        _, logits = self._forward(x, feats)
        return _cross_entropy(logits, ys) + self._pull(x)[0]

    def gradient(self, x: np.ndarray, batch: Batch | None = None) -> np.ndarray:
        x = self._check(x)
        feats, ys = self._select(batch)
        hidden, logits = self._forward(x, feats)
        probs = _softmax(logits)
        probs[np.arange(len(ys)), ys] -= 1.0
        probs /= len(ys)
        d_hidden = (self.w_head.T @ probs.T) * (1.0 - hidden * hidden)
        grad = self.w_prompt.T @ d_hidden.sum(axis=1)
        _, pull_grad = self._pull(x)
        if pull_grad is not None:
            grad = grad + pull_grad
        return grad

    def accuracy(self, x: np.ndarray, indices=None) -> float:
        feats, ys = self._feat_eval, self.y_eval
        if indices is not None:
            feats, ys = feats[:, indices], ys[indices]
        _, logits = self._forward(self._check(x), feats)
        return float(np.mean(np.argmax(logits, axis=1) == ys))

    def describe(self) -> dict:
        return {
            "kind": self.spec.kind,
            "dim": self.dim,
            "token_dim": self.p,
            "token_count": self.m,
            "hidden": self.spec.hidden,
            "ridge": self.spec.ridge,
            "n_classes": self.spec.n_classes,
            "n_features": self.spec.n_features,
            "n_train": self.spec.n_train,
            "n_eval": self.spec.n_eval,
            "uniform_loss": math.log(self.spec.n_classes),
        }


Objective = QuadraticObjective | SoftmaxRegressionObjective | PromptSurrogateObjective


def make_objective(spec: ObjectiveSpec) -> Objective:
    if spec.kind == "quadratic":
        return QuadraticObjective(spec)
    if spec.kind == "softmax_regression":
        return SoftmaxRegressionObjective(spec)
    return PromptSurrogateObjective(spec)


class MeteredObjective:
    """Charges one ledger query per loss evaluation and rejects non-finite
    values.  Only black-box loss calls are metered; analytic gradient calls
    (first-order baselines, integrity checks) pass through uncounted.
    """

    def __init__(self, base, ledger):
        self.base = base
        self.ledger = ledger

    @property
    def dim(self) -> int:
        return self.base.dim

    def loss(self, x: np.ndarray, batch: Batch | None = None) -> float:
        self.ledger.charge(1)
        value = self.base.loss(x, batch)
        if not math.isfinite(value):
            raise EvaluationError(f"objective returned non-finite value {value!r}")
        return value

    def __getattr__(self, name):
        return getattr(self.base, name)


class ReparamObjective:
    """Pulls a full-prompt objective back to the low-dimensional space.

    A delta-length vector is unflattened into variant parameters, the
    per-token matrix is composed and projected on top of the surrogate's
    base prompt, and the surrogate scores the result.  One loss call here
    is one prompt evaluation.
    """

    has_gradient = False
    has_accuracy = True

    def __init__(
        self,
        base: PromptSurrogateObjective,
        shape: PromptShape,
        variant: VariantKind,
        projections: tuple[Projection, ...],
    ):
        if shape.p != base.p or shape.m != base.m:
            raise DimensionError(
                f"shape (p={shape.p}, m={shape.m}) does not match the "
                f"objective's prompt (p={base.p}, m={base.m})"
            )
        self.base = base
        self.shape = shape
        self.variant = variant
        self.projections = tuple(projections)
        self.dim = delta(shape, variant)
        self.n_train = base.n_train

    def _prompt_vector(self, x: np.ndarray) -> np.ndarray:
        params = unflatten(x, self.shape, self.variant)
        prompt = reconstruct_prompt(params, self.base.base_prompt, self.projections)
        return prompt.tuned.flatten(order="F")

    def loss(self, x: np.ndarray, batch: Batch | None = None) -> float:
        return self.base.loss(self._prompt_vector(x), batch)

    def accuracy(self, x: np.ndarray, indices=None) -> float:
        return self.base.accuracy(self._prompt_vector(x), indices)

    def describe(self) -> dict:
        info = self.base.describe()
        info.update({
            "variant": self.variant.value,
            "subspace_dim": self.dim,
            "rank": self.shape.r,
            "token_subspace": self.shape.q,
        })
        return info


class BatchSchedule:
    """Deterministic minibatch sequence: a seeded shuffle per epoch, cut
    into consecutive slices.  The batch for step t is a pure function of
    (seed, t), which is what checkpoint/resume relies on.
    """

    def __init__(self, objective, seed: int, batch_size: int | None):
        n = getattr(objective, "n_train", None)
        if n is None or batch_size is None or batch_size >= n:
            self._full = True
            return
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        self._full = False
        self.seed = seed
        self.n = n
        self.batch_size = batch_size
        self.per_epoch = (n + batch_size - 1) // batch_size

    def batch_for(self, step: int) -> Batch:
        if self._full:
            return FULL_BATCH
        epoch, slot = divmod(step, self.per_epoch)
        order = seeding.rng(self.seed, "batches", epoch).permutation(self.n)
        lo = slot * self.batch_size
        idx = order[lo:lo + self.batch_size].copy()
        return Batch(indices=idx, tag=f"e{epoch}b{slot}")
