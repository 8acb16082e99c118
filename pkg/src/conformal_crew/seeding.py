"""Deterministic seed derivation for reproducible, parallelism-invariant runs.

Every random draw in the package comes from a generator created by
:func:`derive_rng` from a tuple of integers and short strings (master seed,
run index, expert index, instance index, purpose tags).  Because the seed
depends only on those values and never on execution order, results are
identical no matter how work is distributed across processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash64(*parts: int | str) -> int:
    """Hash a tuple of ints and strings to a stable unsigned 64-bit integer.

    Stable across processes and Python versions (unlike ``hash``), and
    injective on the encoded byte stream: each part is tagged with its type
    and, for strings, its length, so ("ab", "c") and ("a", "bc") differ.
    """
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool) or isinstance(part, float):
            raise TypeError(f"seed parts must be int or str, got {part!r}")
        if isinstance(part, int):
            digest.update(b"i")
            digest.update(part.to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            data = part.encode("utf-8")
            digest.update(b"s")
            digest.update(len(data).to_bytes(4, "little"))
            digest.update(data)
        else:
            raise TypeError(f"seed parts must be int or str, got {part!r}")
    return int.from_bytes(digest.digest(), "little")


def derive_rng(*parts: int | str) -> np.random.Generator:
    """Create a fresh generator seeded from a stable hash of ``parts``."""
    return np.random.default_rng(stable_hash64(*parts))


def sample_index(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index proportionally to a nonnegative weight vector.

    Consumes exactly one value from ``rng`` regardless of the outcome, which
    keeps downstream draws aligned when different code paths share a stream.
    The weights need not be normalized but must have positive total mass.
    """
    cumulative = np.cumsum(weights)
    u = rng.random() * cumulative[-1]
    idx = int(np.searchsorted(cumulative, u, side="right"))
    return min(idx, len(weights) - 1)
