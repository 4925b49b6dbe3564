"""Deterministic seed derivation.

Every random decision in the pipeline flows from one master seed through
`derive`, which folds arbitrary labels into a new 64-bit seed with a stable
hash. The scheme is pure arithmetic on the inputs, so regenerating any slice
of a corpus (one image, one chain, one split) never depends on generation
order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

# Named sub-streams hanging off the master seed.
STREAM_FORGE = "forge"
STREAM_CROPS = "crops"
STREAM_SPLITS = "splits"
STREAM_TRAIN = "train"


def stable_hash(*parts) -> int:
    """Hash a tuple of ints/strings to a 64-bit integer, stable across runs."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, (int, np.integer)):
            token = b"i" + int(part).to_bytes(16, "little", signed=True)
        elif isinstance(part, str):
            token = b"s" + part.encode("utf-8")
        else:
            raise TypeError(f"unhashable seed part: {part!r}")
        h.update(len(token).to_bytes(4, "little"))
        h.update(token)
    return int.from_bytes(h.digest(), "little") & MASK64


def derive(seed: int, *parts) -> int:
    """Derive a child seed from `seed` and any mix of int/str labels."""
    return stable_hash(int(seed), *parts)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a derived seed. One per independent decision."""
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))
