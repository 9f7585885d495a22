"""Block-parallel execution with a pinned merge order.

Work is cut into fixed-size blocks; block b always draws from stream
(seed, b).  Results come back in block order whatever the worker count, so
any reduction done over the returned list is bit-reproducible.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

__all__ = ["ENV_WORKERS", "resolve_workers", "block_sizes", "map_blocks", "BlockError"]

ENV_WORKERS = "BRW_LAB_WORKERS"

T = TypeVar("T")


class BlockError(RuntimeError):
    """A block failed; carries the block (replica group) id."""

    def __init__(self, block_id: int, cause: BaseException):
        super().__init__(f"block {block_id} failed: {cause!r}")
        self.block_id = block_id
        self.cause = cause

    def __reduce__(self):
        # keeps the error picklable across worker processes
        return (BlockError, (self.block_id, self.cause))


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: the environment variable wins, then the explicit value, then 1."""
    env = os.environ.get(ENV_WORKERS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{ENV_WORKERS} must be an integer, got {env!r}") from None
    else:
        n = 1 if workers is None else int(workers)
    if n < 1:
        raise ValueError("worker count must be at least 1")
    return n


def block_sizes(n: int, block: int) -> list[int]:
    """Split n samples into blocks of ``block`` (the last one possibly shorter)."""
    if n < 0 or block < 1:
        raise ValueError("need n >= 0 and block >= 1")
    full, rest = divmod(int(n), int(block))
    return [int(block)] * full + ([rest] if rest else [])


def _call(fn, block_id, size):
    try:
        return fn(block_id, size)
    except Exception as exc:  # re-raised with the block id attached
        raise BlockError(block_id, exc) from exc


def map_blocks(fn: Callable[[int, int], T], sizes: Sequence[int], workers: int | None = None) -> list[T]:
    """Evaluate ``fn(block_id, size)`` for every block; results in block order.

    ``fn`` must be picklable (a module-level function or a partial of one)
    when more than one worker is used.
    """
    n_workers = resolve_workers(workers)
    ids = list(range(len(sizes)))
    if n_workers == 1 or len(sizes) <= 1:
        return [_call(fn, b, s) for b, s in zip(ids, sizes)]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(sizes))) as pool:
        return list(pool.map(_call, [fn] * len(ids), ids, list(sizes)))
