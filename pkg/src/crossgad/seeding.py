"""Named deterministic random substreams.

All randomness in a run flows from one integer seed. Each consumer derives
its own generator from (seed, purpose-label), so adding or reordering one
consumer never perturbs the draws seen by another.
"""

import zlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    """Generator for the (seed, label) substream; stable across runs."""
    tag = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFF, tag]))


def derive_seed(seed: int, label: str) -> int:
    """Integer child seed for APIs that take a seed rather than a stream."""
    return int(substream(seed, label).integers(0, 2**63))
