"""Counter-based random streams keyed by (root seed, stream id).

Every replica block draws from its own Philox stream, so results depend only on
the root seed and the block index, never on how blocks are scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "stream", "MAX_SEED"]

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible Philox stream.

    Attributes:
        root_seed: 64-bit experiment seed.
        stream_id: replica or block index.
        counter: number of 4x64-bit blocks to skip before the first draw.
    """

    root_seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.root_seed <= MAX_SEED:
            raise ValueError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        if self.counter < 0:
            raise ValueError("counter must be non-negative")

    def bit_generator(self) -> np.random.Philox:
        seq = np.random.SeedSequence([self.root_seed, self.stream_id])
        bg = np.random.Philox(seq)
        if self.counter:
            bg = bg.advance(self.counter)
        return bg

    def generator(self) -> np.random.Generator:
        return np.random.Generator(self.bit_generator())

    def child(self, sub_id: int) -> "RngStream":
        """Derive an independent stream for a sub-task of this stream."""
        seq = np.random.SeedSequence([self.root_seed, self.stream_id, sub_id])
        key = int(seq.generate_state(1, dtype=np.uint64)[0])
        return RngStream(key, self.stream_id)


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Shorthand for ``RngStream(seed, stream_id).generator()``."""
    return RngStream(seed, stream_id).generator()
