"""Deterministic random streams addressed by a seed and an integer path.

Every stochastic operation in the package draws from an explicit
:class:`RandomStream`.  Streams are backed by numpy's counter-based Philox
generator seeded through ``SeedSequence(entropy=seed, spawn_key=path)``, so
any (seed, path) pair can be reconstructed independently: there is no shared
mutable RNG state, and per-rollout streams such as ``root.child(c, i)`` can
be evaluated concurrently or out of order without changing any draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["RandomStream"]


@dataclass
class RandomStream:
    """A reproducible, splittable random stream.

    Two streams built from the same ``(seed, path)`` yield bit-identical
    draw sequences; streams with distinct paths are statistically
    independent.
    """

    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.path = tuple(int(p) for p in self.path)
        if any(p < 0 for p in self.path):
            raise ValueError(f"stream path entries must be non-negative, got {self.path}")

    def child(self, *path: int) -> "RandomStream":
        """Return the substream addressed by ``path`` below this stream."""
        return RandomStream(self.seed, self.path + path)

    @property
    def gen(self) -> np.random.Generator:
        """Underlying generator, created lazily and stateful afterwards."""
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen
