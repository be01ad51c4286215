"""Seed derivation and generator construction.

All randomness in the package flows from a single root seed through labeled
derivation: a (label, index) pair is hashed together with the root seed into
a fresh 64-bit seed. Derivation is keyed hashing, not stream splitting, so a
derived seed depends only on (root, label, index) and never on call order.
Generators use the Philox counter-based bit generator, so draws within one
stream are deterministic per (seed, draw index).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(root: int, label: str, index: int = 0) -> int:
    """Derive a 64-bit sub-seed from (root, label, index)."""
    key = (root & _MASK64).to_bytes(8, "little")
    msg = f"{label}:{index}".encode()
    digest = hashlib.blake2b(msg, key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generator(seed: int) -> np.random.Generator:
    """Counter-based generator for the given seed."""
    return np.random.Generator(np.random.Philox(seed & _MASK64))
