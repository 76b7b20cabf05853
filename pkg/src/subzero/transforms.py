"""Structured random projections from a low-dimensional search space.

Two interchangeable projection families map a length-``q`` vector into a
length-``p`` ambient space:

* ``FastfoodProjection`` composes sign flips, Walsh-Hadamard transforms, a
  permutation, and a Gaussian diagonal.  It needs O(p) memory and
  O(p log p) time per application.
* ``DenseProjection`` stores an explicit p-by-q Gaussian matrix and is the
  reference the structured version is validated against.

Both are normalized so that E[||project(v)||^2] = ||v||^2 over the draw
of the projection, with the expectation taken over fresh seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from . import seeding


def walsh_hadamard(v: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform of a power-of-two length vector.

    Applying it twice multiplies the input by its length.  Raises
    ``DimensionError`` for lengths that are not powers of two.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    n = v.shape[0]
    if n < 1 or (n & (n - 1)) != 0:
        raise DimensionError(f"length {n} is not a power of two")
    out = v.copy()
    half = 1
    while half < n:
        out = out.reshape(-1, 2 * half)
        a = out[:, :half]
        b = out[:, half:]
        out = np.hstack((a + b, a - b))
        half *= 2
    return out.reshape(n)


def next_pow_two(p: int) -> int:
    """Smallest power of two that is >= p."""
    if p < 1:
        raise DimensionError(f"dimension must be positive, got {p}")
    return 1 << (p - 1).bit_length()


def _check_pq(p: int, q: int) -> None:
    if p < 1 or q < 1:
        raise DimensionError(f"dimensions must be positive, got p={p}, q={q}")
    if q > p:
        raise DimensionError(f"input dimension q={q} exceeds output dimension p={p}")


@dataclass(frozen=True)
class FastfoodProjection:
    """Seeded structured projection from R^q to R^p.

    The stored factors act on a zero-padded copy of the input:
    sign flips ``sign_flip``, a Walsh-Hadamard pass, permutation ``perm``,
    Gaussian scaling ``gauss``, a second Walsh-Hadamard pass, then
    truncation to the first ``p`` coordinates and ``norm_const`` scaling.
    """

    seed: int
    p: int
    q: int
    p_pad: int
    sign_flip: np.ndarray
    perm: np.ndarray
    gauss: np.ndarray
    norm_const: float

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.q,):
            raise DimensionError(f"expected shape ({self.q},), got {v.shape}")
        x = np.zeros(self.p_pad)
        x[: self.q] = v
        x *= self.sign_flip
        x = walsh_hadamard(x)
        x = x[self.perm]
        x *= self.gauss
        x = walsh_hadamard(x)
        return self.norm_const * x[: self.p]


@dataclass(frozen=True)
class DenseProjection:
    """Explicit Gaussian projection matrix, the reference implementation.

    Entries are i.i.d. N(0, 1/p) so that E[||Mv||^2] = ||v||^2.
    """

    seed: int
    p: int
    q: int
    matrix: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.q,):
            raise DimensionError(f"expected shape ({self.q},), got {v.shape}")
        return self.matrix @ v


Projection = FastfoodProjection | DenseProjection


def build_fastfood(seed: int, p: int, q: int) -> FastfoodProjection:
    """Draw the sign, permutation, and Gaussian factors for one projection.

    The draw order (signs, then permutation, then Gaussians) is part of the
    reproducibility contract: rebuilding with the same seed gives the same
    factors bit for bit.
    """
    _check_pq(p, q)
    p_pad = next_pow_two(p)
    gen = np.random.default_rng(seed)
    sign_flip = (gen.integers(0, 2, size=p_pad) * 2 - 1).astype(np.float64)
    perm = gen.permutation(p_pad)
    gauss = gen.standard_normal(p_pad)
    sign_flip.setflags(write=False)
    perm.setflags(write=False)
    gauss.setflags(write=False)
    # Two Hadamard passes contribute p_pad to E[||.||^2] and the truncation
    # keeps p of p_pad coordinates, hence the 1/sqrt(p * p_pad) scale.
    norm_const = 1.0 / math.sqrt(p * p_pad)
    return FastfoodProjection(
        seed=seed, p=p, q=q, p_pad=p_pad,
        sign_flip=sign_flip, perm=perm, gauss=gauss, norm_const=norm_const,
    )


def build_dense(seed: int, p: int, q: int) -> DenseProjection:
    _check_pq(p, q)
    gen = np.random.default_rng(seed)
    matrix = gen.standard_normal((p, q)) / math.sqrt(p)
    matrix.setflags(write=False)
    return DenseProjection(seed=seed, p=p, q=q, matrix=matrix)


def project(proj: Projection, v: np.ndarray) -> np.ndarray:
    """Apply a projection to a length-q vector, returning a length-p vector."""
    return proj.apply(v)


def per_token_projections(
    base_seed: int, count: int, p: int, q: int, kind: str = "fastfood"
) -> tuple[Projection, ...]:
    """Independent projections for ``count`` slots, seeded from one base seed."""
    if kind == "fastfood":
        build = build_fastfood
    elif kind == "dense":
        build = build_dense
    else:
        raise ValueError(f"unknown projection kind {kind!r}")
    return tuple(
        build(seeding.mix_seed(base_seed, "token", i), p, q) for i in range(count)
    )
