"""
cimo/core/rng.py
================
Named, splittable random streams.

A stream is a master seed plus a path of integer/string keys. Children are
derived by extending the path, so replicate `r` of any simulation always gets
the same numbers no matter which thread runs it or in which order.
"""

from __future__ import annotations
import hashlib
from dataclasses import dataclass, field

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be nonnegative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, *keys: int | str) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(self.seed), *self.path])

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())

    def int_seed(self) -> int:
        """32-bit seed for libraries that only accept an int (networkx)."""
        return int(self.seed_sequence().generate_state(1)[0])


def as_stream(rng: "RngStream | int") -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(int(rng))
