"""Process-stable derivation of child seeds from a master seed."""

import zlib

import numpy as np


def subseed(seed, *tags):
    """Derive a child seed from (seed, tags); stable across processes and runs."""
    parts = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(parts).generate_state(1)[0])
