"""
Seed-stream derivation.

Every random draw in the package comes from a PCG64 generator seeded by

    SeedSequence(seed, spawn_key=(stream, index))

so that the ℓ-th sphere direction or the ℓ-th permutation depends on (seed, ℓ) only,
never on how the work is split among workers.
"""
from numpy.random import SeedSequence, default_rng

__all__ = ["SPHERE", "PERMUTATION", "DATA", "stream_rng"]

SPHERE = 0
PERMUTATION = 1
DATA = 2


def stream_rng(seed: int, stream: int, index: int = None):
    key = (stream,) if index is None else (stream, int(index))
    return default_rng(SeedSequence(int(seed), spawn_key=key))
