"""Named-stream seed derivation.

All randomness flows from one master seed; independent streams are derived
from (master, stream name, indices) so regenerating any artifact never
depends on call order.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed_sequence(master: int, *names) -> np.random.SeedSequence:
    keys = [int(master) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, str):
            keys.append(zlib.crc32(name.encode()))
        else:
            keys.append(int(name) & 0xFFFFFFFF)
    return np.random.SeedSequence(keys)


def derive_rng(master: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(master, *names)))


def derive_seed(master: int, *names) -> int:
    return int(derive_seed_sequence(master, *names).generate_state(1)[0])
