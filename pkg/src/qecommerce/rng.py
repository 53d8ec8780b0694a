"""Seed expansion.

Every random stream in the package is a Philox counter-mode generator
keyed by ``(root_seed, label)``.  The label is hashed with CRC-32 into the
spawn key of a ``SeedSequence``, so two streams with different labels are
independent and a stream never depends on how many draws another stream
made.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *labels) -> np.random.Generator:
    """Return the generator for ``seed`` and a path of labels."""
    key = tuple(zlib.crc32(str(label).encode()) for label in labels)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *labels) -> int:
    """A 63-bit child seed, for APIs that take an int."""
    return int(stream(seed, *labels).integers(0, 2**63 - 1))
