"""Named random sub-streams derived from one 64-bit seed."""
from __future__ import annotations

import zlib

import numpy as np

SYNTH = "synth"
PROPOSAL = "proposal"
RETROSPECTIVE = "retrospective"


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; the same (seed, name) always replays the same draws."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
