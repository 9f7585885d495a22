"""Ladder structure of a centered walk: direct samples and Monte Carlo renewal counts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..models import StepDistribution
from . import _ladder_kernels as lk

__all__ = ["LadderSample", "ladder_sample", "step_arrays", "ladder_counts", "killed_walks"]


@dataclass(frozen=True)
class LadderSample:
    """Strict ladder records of one path of fixed length.

    Index 0 of every sequence is the start (epoch 0, height 0).  The final
    ladder epoch in each direction is censored: the next record, if any,
    lies beyond ``path_length``.
    """

    descending_heights: np.ndarray
    descending_epochs: np.ndarray
    ascending_heights: np.ndarray
    ascending_epochs: np.ndarray
    path_length: int
    censored: bool = True


def _records(path: np.ndarray, descending: bool) -> tuple[np.ndarray, np.ndarray]:
    x = -path if descending else path
    # strict records of x: x_j > max_{i<j} x_i
    run = np.maximum.accumulate(x)
    prev = np.concatenate([[-np.inf], run[:-1]])
    idx = np.flatnonzero(x > prev)
    return path[idx], idx


def ladder_sample(dist: StepDistribution, path_length: int, rng: np.random.Generator) -> LadderSample:
    if path_length < 0:
        raise ValueError("path_length must be non-negative")
    path = np.concatenate([[0.0], np.cumsum(dist.sample(rng, path_length))])
    hd, td = _records(path, True)
    ha, ta = _records(path, False)
    return LadderSample(hd, td, ha, ta, path_length)


def step_arrays(dist: StepDistribution, sign: int = 1):
    """Kernel encoding of ``sign * X``: (gaussian flag, sd, support, probs)."""
    if dist.is_lattice:
        sup = sign * np.asarray(dist.support, dtype=float)
        pr = np.asarray(dist.probs, dtype=float)
        order = np.argsort(sup, kind="stable")
        return False, dist.sigma, sup[order], pr[order]
    return True, dist.sigma, np.zeros(1), np.ones(1)


def _tail_table(dist: StepDistribution, sign: int):
    """P(sign*X >= t) on integer t over the support (lattice)."""
    _, _, sup, pr = step_arrays(dist, sign)
    lo, hi = int(sup.min()), int(sup.max())
    ts = np.arange(lo, hi + 1)
    table = np.array([pr[sup >= t].sum() for t in ts])
    return table, lo


def ladder_counts(dist: StepDistribution, u_grid, n: int, rng: np.random.Generator, sign: int = 1):
    """Per-walk descending (sign=+1) or ascending (sign=-1) ladder counts.

    Returns (count, harm, jumps): see the kernel.  Records are followed to
    max(u_grid) plus the reach of one step, so ``harm`` is complete.
    """
    g, sd, sup, pr = step_arrays(dist, sign)
    u = np.asarray(u_grid, dtype=float)
    if g:
        reach = 10.0 * sd
        table, lo, kind = np.zeros(1), 0, 0
    else:
        reach = float(sup.max()) + 1.0
        table, lo = _tail_table(dist, sign)
        kind = 1
    return lk.ladder_counts(rng, int(n), g, sd, sup, pr, u, float(u.max() + reach), kind, table, lo)


def killed_walks(dist: StepDistribution, n: int, start: float, floor: float, checkpoints,
                 rng: np.random.Generator):
    g, sd, sup, pr = step_arrays(dist)
    cps = np.asarray(checkpoints, dtype=np.int64)
    if np.any(np.diff(cps) <= 0) or cps[0] < 0:
        raise ValueError("checkpoints must be increasing and non-negative")
    return lk.killed_walks(rng, int(n), g, sd, sup, pr, float(start), float(floor), int(cps[-1]), cps)
