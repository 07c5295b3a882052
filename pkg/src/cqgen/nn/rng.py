"""Deterministic randomness: one seeded PCG64 stream per Rng instance."""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Seeded PRNG wrapper; identical seed gives an identical stream.

    `derive(tag)` produces an independent stream whose seed is a hash of
    (seed, tag), so sub-tasks stay reproducible without sharing state.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, tag: str) -> "Rng":
        h = hashlib.sha256(f"{self.seed}:{tag}".encode()).digest()
        return Rng(int.from_bytes(h[:8], "little"))

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, shape)

    def choice(self, n_or_items, size=None, replace: bool = True, p=None):
        return self._gen.choice(n_or_items, size=size, replace=replace, p=p)

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
