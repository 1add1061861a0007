"""Seeded, splittable random streams.

Each stream is a Philox counter-based generator keyed by a 64-bit seed; child
streams hash the parent seed with a stream index, so any sub-computation can
be reproduced without replaying its siblings. A stream is not meant to be
shared between threads; derive a child per worker instead.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *path: int | str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", seed & MASK64))
    for part in path:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8"))
        else:
            h.update(b"i" + struct.pack("<Q", part & MASK64))
    return struct.unpack("<Q", h.digest())[0]


class DeterministicRng:
    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, *path: int | str) -> "DeterministicRng":
        return DeterministicRng(derive_seed(self.seed, *path))

    def next_seed(self) -> int:
        return int(self.gen.integers(0, 1 << 64, dtype=np.uint64))

    # thin delegation to the numpy generator
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def random(self, size=None):
        return self.gen.random(size)

    def permutation(self, n):
        return self.gen.permutation(n)
