"""Deterministic seed derivation.

Every random draw in the package comes from a generator built with
``rng(...)``, whose seed is a splitmix64 hash of the run's base seed plus
a handful of labels (a purpose tag, a step index, a sample index, ...).
Keying streams by labels instead of sharing one sequential generator is
what makes checkpoint/resume and parallel evaluation reproduce the
serial trajectory bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixing function."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def mix_seed(*parts: int | str) -> int:
    """Hash a sequence of ints and string tags into one 64-bit seed.

    String tags separate independent streams that share the same numeric
    labels (e.g. perturbations vs. minibatches at the same step).
    """
    h = 0
    for part in parts:
        if isinstance(part, str):
            part = int.from_bytes(part.encode("utf-8"), "little")
        h = splitmix64((h ^ (part & _MASK64)) & _MASK64)
    return h


def rng(*parts: int | str) -> np.random.Generator:
    """A fresh PCG64 generator keyed by the given labels."""
    return np.random.default_rng(mix_seed(*parts))
