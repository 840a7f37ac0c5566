"""Seeded, splittable random number streams.

Every stochastic routine in this package takes an explicit :class:`RngStream`
instead of relying on global state. A stream is identified by a ``(seed,
stream_id)`` pair and is backed by the counter-based Philox generator, so the
same pair produces the same draws regardless of how many other streams were
consumed before it. Parallel work (chains, grid cells, repeats) gets
independent substreams via :meth:`RngStream.substream`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["RngStream"]


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        object.__setattr__(
            self, "_gen", np.random.Generator(np.random.Philox(key=key))
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, index: int) -> "RngStream":
        """Derive an independent stream; substreams of distinct indices never overlap."""
        # Philox keys are 128-bit, so (seed, f(stream_id, index)) stays collision-free
        # as long as callers do not nest deeper than the 32-bit index space.
        return RngStream(self.seed, (self.stream_id * 0x100000000 + index + 1) % 2**64)

    def standard_normal(self, *shape: int) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, *shape: int) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, *shape: int) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
