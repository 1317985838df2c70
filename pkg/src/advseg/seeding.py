"""Deterministic seed derivation.

A single master seed fans out into named sub-streams (model init, epoch
shuffling, synthetic data, ...). Each consumer hashes its label into the
master seed and runs the result through a splitmix64 finalizer, so adding a
new named consumer never perturbs the streams of existing ones.
"""

import hashlib

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step (Steele et al. finalizer constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(master: int, label: str) -> int:
    """Derive the 64-bit sub-seed for `label` from a master seed.

    The label is hashed with SHA-256 (stable across runs and platforms,
    unlike Python's salted hash()) and folded into the master seed.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    folded = int.from_bytes(digest[:8], "little")
    return splitmix64((master & _MASK64) ^ folded)
