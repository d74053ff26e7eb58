"""Reproducible random streams.

Every stream is a Philox4x64-10 counter-based generator whose key is a
64-bit seed. Uniform doubles are built from the raw 64-bit outputs as
``((x >> 11) + 0.5) * 2**-53``, which lies strictly inside (0, 1) and does
not depend on any numpy distribution code, only on the bit generator.

Per-replication seeds come from the SplitMix64 output function applied to
``master + (index + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``; this is the
``index``-th output of a SplitMix64 generator started at ``master``, and it
is injective in ``index`` for a fixed master seed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_TWO_M53 = 2.0**-53


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Stafford variant 13)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Seed for replication ``index`` under ``master_seed``."""
    if index < 0:
        raise ValueError("replication index must be non-negative")
    return mix64((master_seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


class RngState:
    """A single owned random stream. Not meant to be shared between streams."""

    __slots__ = ("seed", "_bitgen")

    def __init__(self, seed: int):
        if not 0 <= seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self._bitgen = np.random.Philox(key=seed)

    @classmethod
    def for_replication(cls, master_seed: int, index: int) -> "RngState":
        return cls(derive_seed(master_seed, index))

    def uniform(self) -> float:
        return ((int(self._bitgen.random_raw()) >> 11) + 0.5) * _TWO_M53

    def uniforms(self, size: int) -> np.ndarray:
        raw = self._bitgen.random_raw(size)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed:#018x})"
