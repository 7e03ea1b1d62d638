"""Deterministic seed derivation.

All randomness in the toolkit flows from a single user-facing seed; sub-streams
(parameter init, shuffling, dropout, per-alpha sweep runs) use splitmix64
expansion so adding a consumer never perturbs existing streams.
"""

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(seed: int, index: int) -> int:
    """Derive the ``index``-th child seed from ``seed``."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64
