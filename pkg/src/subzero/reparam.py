"""Low-dimensional reparameterizations of a per-token weight matrix.

The search space is a q-by-m matrix W holding one length-q vector per
token slot.  Its variants trade parameter count against expressiveness:

* ``standard``            W stored directly                      (q*m)
* ``low_rank``            W = U V^T                              (r*(q+m))
* ``low_rank_diag``       W = U diag(s) V^T                      (r*(q+m+1))
* ``low_rank_share``      W = U V^T + outer(u, ones)             (r*(q+m)+q)
* ``low_rank_diag_share`` W = U diag(s) V^T + outer(u, ones)     (r*(q+m+1)+q)

``low_rank_diag_share`` is the full stack.  Column i of W is projected
into the ambient space and added to token i of a frozen base prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError
from . import seeding
from .transforms import Projection, project


class VariantKind(str, Enum):
    STANDARD = "standard"
    LOW_RANK = "low_rank"
    LOW_RANK_DIAG = "low_rank_diag"
    LOW_RANK_SHARE = "low_rank_share"
    LOW_RANK_DIAG_SHARE = "low_rank_diag_share"

    @property
    def has_diag(self) -> bool:
        return self in (VariantKind.LOW_RANK_DIAG, VariantKind.LOW_RANK_DIAG_SHARE)

    @property
    def has_share(self) -> bool:
        return self in (VariantKind.LOW_RANK_SHARE, VariantKind.LOW_RANK_DIAG_SHARE)

    @property
    def is_factorized(self) -> bool:
        return self is not VariantKind.STANDARD


@dataclass(frozen=True)
class PromptShape:
    """Dimensions of the search problem.

    p: ambient per-token dimension, m: token count, q: subspace dimension
    per token, r: factorization rank.
    """

    p: int
    m: int
    q: int
    r: int

    def __post_init__(self):
        if self.p < 1 or self.m < 1 or self.q < 1:
            raise DimensionError(f"p, m, q must be positive, got {self}")
        if self.q > self.p:
            raise DimensionError(f"q={self.q} exceeds ambient dimension p={self.p}")
        if not (1 <= self.r <= min(self.q, self.m)):
            raise DimensionError(
                f"rank r={self.r} outside [1, min(q={self.q}, m={self.m})]"
            )

    @classmethod
    def from_total_subspace(cls, p: int, m: int, total: int, r: int) -> "PromptShape":
        """Split a total subspace budget evenly across tokens: q = total // m."""
        return cls(p=p, m=m, q=total // m, r=r)


def delta(shape: PromptShape, variant: VariantKind) -> int:
    """Number of trainable parameters for the given variant."""
    q, m, r = shape.q, shape.m, shape.r
    if variant is VariantKind.STANDARD:
        return q * m
    n = r * (q + m)
    if variant.has_diag:
        n += r
    if variant.has_share:
        n += q
    return n


@dataclass(frozen=True)
class IntrinsicParams:
    """Trainable parameters of one variant.

    Fields not used by the variant are None.  ``left`` is the q-by-r
    factor U, ``scale`` the length-r diagonal s, ``right`` the m-by-r
    factor V, ``shared`` the length-q vector added to every token, and
    ``direct`` the unfactorized q-by-m matrix of the standard variant.
    """

    shape: PromptShape
    variant: VariantKind
    left: np.ndarray | None = None
    scale: np.ndarray | None = None
    right: np.ndarray | None = None
    shared: np.ndarray | None = None
    direct: np.ndarray | None = None

    def __post_init__(self):
        q, m, r = self.shape.q, self.shape.m, self.shape.r
        expect: dict[str, tuple[int, ...] | None]
        if self.variant is VariantKind.STANDARD:
            expect = {"left": None, "scale": None, "right": None,
                      "shared": None, "direct": (q, m)}
        else:
            expect = {
                "left": (q, r),
                "scale": (r,) if self.variant.has_diag else None,
                "right": (m, r),
                "shared": (q,) if self.variant.has_share else None,
                "direct": None,
            }
        for name, want in expect.items():
            got = getattr(self, name)
            if want is None:
                if got is not None:
                    raise DimensionError(
                        f"{self.variant.value} does not use field {name!r}"
                    )
            else:
                if got is None or got.shape != want:
                    have = None if got is None else got.shape
                    raise DimensionError(
                        f"{self.variant.value} field {name!r}: expected shape "
                        f"{want}, got {have}"
                    )


@dataclass(frozen=True)
class FullPrompt:
    """A frozen base prompt and the tuned prompt built on top of it."""

    base: np.ndarray    # p x m
    tuned: np.ndarray   # p x m


def init_intrinsic(seed: int, shape: PromptShape, variant: VariantKind) -> IntrinsicParams:
    """Initial parameters: the composed W is exactly zero.

    U, u, and the standard matrix start at zero; s starts at ones; V is a
    seeded standard Gaussian so the low-rank factorization has a
    well-defined row space from the first step.
    """
    q, m, r = shape.q, shape.m, shape.r
    if variant is VariantKind.STANDARD:
        return IntrinsicParams(shape, variant, direct=np.zeros((q, m)))
    right = seeding.rng(seed, "init-right").standard_normal((m, r))
    return IntrinsicParams(
        shape, variant,
        left=np.zeros((q, r)),
        scale=np.ones(r) if variant.has_diag else None,
        right=right,
        shared=np.zeros(q) if variant.has_share else None,
    )


def compose_weight(params: IntrinsicParams) -> np.ndarray:
    """Materialize the q-by-m matrix W from the stored factors."""
    if params.variant is VariantKind.STANDARD:
        return params.direct.copy()
    left = params.left
    if params.scale is not None:
        left = left * params.scale
    w = left @ params.right.T
    if params.shared is not None:
        w += params.shared[:, None]
    return w


def reconstruct_prompt(
    params: IntrinsicParams,
    base: np.ndarray,
    projections: tuple[Projection, ...] | list[Projection],
) -> FullPrompt:
    """Project each column of W into the ambient space and add it to the base.

    At initialization W is zero, so the tuned prompt equals the base exactly.
    """
    shape = params.shape
    base = np.asarray(base, dtype=np.float64)
    if base.shape != (shape.p, shape.m):
        raise DimensionError(
            f"base prompt shape {base.shape} != ({shape.p}, {shape.m})"
        )
    if len(projections) != shape.m:
        raise DimensionError(
            f"need {shape.m} projections, got {len(projections)}"
        )
    for i, proj in enumerate(projections):
        if proj.p != shape.p or proj.q != shape.q:
            raise DimensionError(
                f"projection {i} maps R^{proj.q} -> R^{proj.p}, "
                f"shape needs R^{shape.q} -> R^{shape.p}"
            )
    w = compose_weight(params)
    tuned = base.copy()
    for i in range(shape.m):
        tuned[:, i] += project(projections[i], w[:, i])
    return FullPrompt(base=base, tuned=tuned)


def _blocks(params: IntrinsicParams):
    # Flattening order is part of the on-disk and optimizer contract:
    # U (column-major), s, V (column-major), u; the standard variant is
    # its matrix column-major.
    if params.variant is VariantKind.STANDARD:
        yield params.direct.flatten(order="F")
        return
    yield params.left.flatten(order="F")
    if params.scale is not None:
        yield params.scale
    yield params.right.flatten(order="F")
    if params.shared is not None:
        yield params.shared


def flatten(params: IntrinsicParams) -> np.ndarray:
    """Concatenate the variant's blocks into one delta-length vector."""
    return np.concatenate(list(_blocks(params)))


def unflatten(vec: np.ndarray, shape: PromptShape, variant: VariantKind) -> IntrinsicParams:
    """Inverse of ``flatten``; exact round trip, no arithmetic on values."""
    vec = np.asarray(vec, dtype=np.float64)
    want = delta(shape, variant)
    if vec.shape != (want,):
        raise DimensionError(
            f"expected a vector of length {want} for {variant.value} on "
            f"{shape}, got shape {vec.shape}"
        )
    q, m, r = shape.q, shape.m, shape.r
    if variant is VariantKind.STANDARD:
        return IntrinsicParams(
            shape, variant, direct=vec.reshape((q, m), order="F").copy()
        )
    pos = 0

    def take(n: int) -> np.ndarray:
        nonlocal pos
        out = vec[pos:pos + n]
        pos += n
        return out

    left = take(q * r).reshape((q, r), order="F").copy()
    scale = take(r).copy() if variant.has_diag else None
    right = take(m * r).reshape((m, r), order="F").copy()
    shared = take(q).copy() if variant.has_share else None
    return IntrinsicParams(shape, variant, left=left, scale=scale,
                           right=right, shared=shared)


def serialize_params(params: IntrinsicParams) -> str:
    """Text encoding of the parameters; round-trips bit for bit.

    Values are written with ``repr``, which is exact for float64.
    """
    vec = flatten(params)
    s = params.shape
    lines = [
        "subzero-params v1",
        f"shape p={s.p} m={s.m} q={s.q} r={s.r}",
        f"variant {params.variant.value}",
        f"values {vec.size}",
    ]
    lines.extend(repr(float(x)) for x in vec)
    return "\n".join(lines) + "\n"


def parse_params(text: str) -> IntrinsicParams:
    lines = text.strip().split("\n")
    if not lines or lines[0] != "subzero-params v1":
        raise ValueError("not a subzero parameter file")
    fields = dict(kv.split("=") for kv in lines[1].split()[1:])
    shape = PromptShape(p=int(fields["p"]), m=int(fields["m"]),
                        q=int(fields["q"]), r=int(fields["r"]))
    variant = VariantKind(lines[2].split()[1])
    count = int(lines[3].split()[1])
    values = np.array([float(x) for x in lines[4:4 + count]])
    if values.size != count:
        raise ValueError(f"expected {count} values, found {values.size}")
    return unflatten(values, shape, variant)
