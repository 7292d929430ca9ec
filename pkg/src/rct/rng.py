"""Named, replayable random streams derived from one root seed.

Streams use the counter-based Philox generator so any (seed, name, context)
triple can be reopened independently of draw order elsewhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, name: str, *context: int) -> np.random.Generator:
    spawn_key = (zlib.crc32(name.encode("utf-8")),) + tuple(c & 0xFFFFFFFF for c in context)
    seq = np.random.SeedSequence(entropy=root_seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def stream_hash(text: str) -> int:
    """Stable 32-bit hash for string context components (e.g. program ids)."""
    return zlib.crc32(text.encode("utf-8"))
