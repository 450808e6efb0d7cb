"""Deterministic random streams with reproducible splitting.

Every stochastic choice in the package (dropout masks, span placement,
target selection, shuffling, corpus sampling) draws from an explicitly
passed Rng. An Rng is identified by a 64-bit seed plus a split path;
the same seed and the same call sequence always reproduce the same
outputs, and child streams are independent of the parent's position.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random stream backed by PCG64, split-able into substreams."""

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=_path))
        )
        self._n_children = 0

    def child(self, key: int) -> "Rng":
        """Independent substream addressed by `key`; order of creation is irrelevant."""
        return Rng(self.seed, self._path + (int(key),))

    def split(self, n: int) -> list["Rng"]:
        """n independent substreams, continuing the sequential child numbering."""
        start = self._n_children
        self._n_children += n
        return [self.child(start + i) for i in range(n)]

    # -- drawing primitives ------------------------------------------------

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def uniform(self, size=None):
        return self._gen.random(size=size)

    def normal(self, size=None, std: float = 1.0):
        return self._gen.normal(0.0, std, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def keep_mask(self, shape, drop_prob: float) -> np.ndarray:
        """Boolean mask where True marks survivors under element drop probability."""
        return self._gen.random(size=shape) >= drop_prob

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self._path})"
