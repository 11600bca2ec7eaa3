"""Named deterministic RNG substreams derived from one run seed.

Every source of randomness in the pipeline (split, shuffle, dropout, init)
draws from its own named substream so that changing one component never
perturbs the others.
"""

import hashlib

import numpy as np


def substream_seed(seed: int, name: str) -> int:
    """Stable 64-bit seed for the named substream of `seed`."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(seed, name)))
