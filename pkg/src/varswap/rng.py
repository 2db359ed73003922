"""Counter-based random substreams.

Paths are grouped into fixed blocks of ``BLOCK_SIZE`` consecutive indices.
Block ``b`` draws from a Philox-4x64 generator keyed by the 128-bit value
``(seed mod 2^64, b)`` with its counter starting at zero; within a block,
every draw is a full-width vector of ``BLOCK_SIZE`` lanes and path
``i`` always reads lane ``i % BLOCK_SIZE``.  The draws seen by a path are
therefore a function of ``(seed, path index)`` alone: they do not depend on
how many paths are requested or on how blocks are spread over workers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BLOCK_SIZE = 1024
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    block: int

    @classmethod
    def for_path(cls, seed: int, path_index: int) -> tuple["RngStream", int]:
        """Stream and lane that serve ``path_index``."""
        return cls(seed, path_index // BLOCK_SIZE), path_index % BLOCK_SIZE

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.block], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def block_range(start: int, stop: int) -> range:
    """Indices of the blocks that cover paths ``[start, stop)``."""
    return range(start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE + 1)
