"""Seeded, partitioned random streams.

Every consumer of randomness (truth process noise, observation noise,
particle initialization, each filter's particle noise) gets its own
counter-based Philox stream keyed by ``(seed, run, role, ...)``.  Adding
particles or filters therefore never shifts the numbers another consumer
sees.
"""

import zlib

import numpy as np

TRUTH_B = "truth-B"
TRUTH_W = "truth-W"
TRUTH_INIT = "truth-init"
INIT = "init-sampling"


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(seed, *key):
    """Return an independent ``Generator`` for ``(seed, *key)``.

    Key parts may be ints or strings; strings are hashed with CRC-32 so the
    mapping is stable across interpreter sessions.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
