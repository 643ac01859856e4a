"""Deterministic random streams.

Every stream is keyed by integers and derived from the master seed with
``SeedSequence``; identical keys give identical draws in any process.
"""

from enum import IntEnum

import numpy as np


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for (master_seed, *key)."""
    sequence = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(int(k) for k in key)
    )
    return np.random.Generator(np.random.PCG64(sequence))


class Stream(IntEnum):
    """Stream keys of the Monte-Carlo estimators, disjoint from run indices."""

    norms = 1_000_001
    spectra = 1_000_002
    products = 1_000_003
    lyapunov = 1_000_004
    projection = 1_000_005
    moments = 1_000_006
    perturbation = 1_000_007
