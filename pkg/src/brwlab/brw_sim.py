"""Branching random walk trees under the original measure.

Trees are stored as append-only arenas with generations laid out contiguously,
so generation g occupies ``slice(offsets[g], offsets[g + 1])``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .models import PointProcessSpec

__all__ = [
    "BarrierPolicy",
    "TreeState",
    "PopulationCapExceeded",
    "MinRecord",
    "DecompositionTerms",
    "simulate_tree",
    "additive_martingale",
    "derivative_martingale",
    "truncated_martingale",
    "generation_min",
    "path_minima",
    "global_min",
    "min_decomposition",
    "frak_D_truncated",
    "truncate_terms",
    "GenerationBatch",
    "simulate_generations",
    "survival_probability",
    "REPLICA_FIELDS",
    "replica_row",
    "write_replicas",
]

DEFAULT_CAP = 10 ** 8


class PopulationCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class BarrierPolicy:
    """Upper killing barrier for tree simulation.

    ``adaptive(x, slack)`` kills above ``-x + slack``: a particle killed at y can
    only matter for {M <= -x} through descendants travelling down by x + y,
    which happens with probability at most e^{-(x+y)} <= e^{-slack}.
    """

    kind: str = "none"
    y_max: float = math.inf
    x: float = 0.0
    slack: float = 6.0

    @classmethod
    def none(cls) -> "BarrierPolicy":
        return cls("none")

    @classmethod
    def fixed(cls, y_max: float, x: float = 0.0) -> "BarrierPolicy":
        return cls("fixed", float(y_max), float(x))

    @classmethod
    def adaptive(cls, x: float, slack: float = 6.0) -> "BarrierPolicy":
        return cls("adaptive", -float(x) + float(slack), float(x), float(slack))

    def __post_init__(self) -> None:
        if self.kind not in ("none", "fixed", "adaptive"):
            raise ValueError(f"unknown barrier kind {self.kind!r}")

    @property
    def level(self) -> float:
        return math.inf if self.kind == "none" else self.y_max


@dataclass
class TreeState:
    parent: np.ndarray
    generation: np.ndarray
    position: np.ndarray
    offsets: np.ndarray
    horizon: int
    upper_barrier: float | None = None
    killed_mass_bound: float = 0.0
    killed_count: int = 0

    @property
    def size(self) -> int:
        return self.position.shape[0]

    def gen_slice(self, g: int) -> slice:
        return slice(int(self.offsets[g]), int(self.offsets[g + 1]))

    @property
    def frontier(self) -> np.ndarray:
        return np.arange(self.offsets[self.horizon], self.offsets[self.horizon + 1])

    def generation_positions(self, g: int) -> np.ndarray:
        return self.position[self.gen_slice(g)]

    @property
    def survived(self) -> bool:
        return self.offsets[self.horizon + 1] > self.offsets[self.horizon]


def simulate_tree(spec: PointProcessSpec, horizon: int, barrier: BarrierPolicy | None,
                  rng: np.random.Generator, cap: int = DEFAULT_CAP) -> TreeState:
    """Breadth-first simulation to ``horizon`` generations with optional upper killing."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    barrier = barrier or BarrierPolicy.none()
    level = barrier.level
    sd = spec.sigma_g
    positions = [np.zeros(1)]
    parents = [np.full(1, -1, dtype=np.int64)]
    offsets = [0, 1]
    killed_bound = 0.0
    killed = 0
    front = positions[0]
    front_start = 0
    total = 1
    for _ in range(horizon):
        nf = front.shape[0]
        if nf == 0:
            positions.append(np.empty(0))
            parents.append(np.empty(0, dtype=np.int64))
            offsets.append(total)
            continue
        branch = rng.random(nf) < spec.p
        disp = rng.normal(spec.mu, sd, (nf, 2))
        idx = np.flatnonzero(branch)
        child = (front[idx, None] + disp[idx]).ravel()
        par = np.repeat(idx + front_start, 2)
        if level < math.inf:
            over = child > level
            if over.any():
                killed_bound += float(np.exp(-(barrier.x + child[over])).sum())
                killed += int(over.sum())
                child, par = child[~over], par[~over]
        if total + child.shape[0] > cap:
            raise PopulationCapExceeded(
                f"population {total + child.shape[0]} exceeds cap {cap} at generation {len(offsets) - 1}")
        positions.append(child)
        parents.append(par)
        front_start = total
        total += child.shape[0]
        offsets.append(total)
        front = child
    pos = np.concatenate(positions)
    par = np.concatenate(parents)
    gens = np.repeat(np.arange(horizon + 1, dtype=np.int32), np.diff(offsets))
    return TreeState(par, gens, pos, np.asarray(offsets, dtype=np.int64), horizon,
                     None if level == math.inf else level, killed_bound, killed)


def _check_n(tree: TreeState, n: int) -> None:
    if not 0 <= n <= tree.horizon:
        raise ValueError(f"generation {n} outside [0, {tree.horizon}]")


def additive_martingale(tree: TreeState, n: int) -> float:
    _check_n(tree, n)
    v = tree.generation_positions(n)
    return float(np.exp(-v).sum())


def derivative_martingale(tree: TreeState, n: int) -> float:
    _check_n(tree, n)
    v = tree.generation_positions(n)
    return float((v * np.exp(-v)).sum())


def path_minima(tree: TreeState) -> np.ndarray:
    """min_{j <= |z|} V(z_j) for every particle (root included)."""
    pm = tree.position.copy()
    for g in range(1, tree.horizon + 1):
        sl = tree.gen_slice(g)
        pm[sl] = np.minimum(pm[sl], pm[tree.parent[sl]])
    return pm


def truncated_martingale(tree: TreeState, n: int, a: float,
                         renewal_minus: Callable[[np.ndarray], np.ndarray],
                         pathmin: np.ndarray | None = None) -> float:
    """sum_{|z|=n} R^-(V(z)+a) e^{-V(z)} 1{min_{j<=n} V(z_j) >= -a}."""
    if not a > 0:
        raise ValueError("a must be positive")
    _check_n(tree, n)
    sl = tree.gen_slice(n)
    pm = path_minima(tree) if pathmin is None else pathmin
    v = tree.position[sl]
    keep = pm[sl] >= -a
    if not keep.any():
        return 0.0
    v = v[keep]
    return float((np.asarray(renewal_minus(v + a)) * np.exp(-v)).sum())


def generation_min(tree: TreeState, n: int) -> float:
    v = tree.generation_positions(n)
    return float(v.min()) if v.size else math.inf


@dataclass(frozen=True)
class MinRecord:
    value: float
    argmin_index: int
    argmin_generation: int
    tie_count: int


def global_min(tree: TreeState, rng: np.random.Generator | None = None,
               rel_tol: float = 1e-9) -> MinRecord:
    """Global minimum; the argmin is the youngest minimizer, uniform among ties.

    Positions within ``rel_tol`` (relative, floored at 1e-300) of the minimum
    count as ties.
    """
    pos = tree.position
    m = float(pos.min())
    tol = rel_tol * max(abs(m), 1e-300)
    ties = np.flatnonzero(pos <= m + tol)
    gens = tree.generation[ties]
    youngest = ties[gens == gens.min()]
    if youngest.size > 1:
        if rng is None:
            raise ValueError("ties at the minimum need an rng for the uniform choice")
        pick = int(youngest[rng.integers(youngest.size)])
    else:
        pick = int(youngest[0])
    return MinRecord(m, pick, int(tree.generation[pick]), int(ties.size))


def _ancestry(tree: TreeState, idx: int) -> list[int]:
    chain = [idx]
    while tree.parent[chain[-1]] >= 0:
        chain.append(int(tree.parent[chain[-1]]))
    return chain[::-1]


def _children_index(tree: TreeState) -> tuple[np.ndarray, np.ndarray]:
    """CSR child lists: children of i are order[start[i]:start[i+1]]."""
    par = tree.parent[1:]
    counts = np.bincount(par, minlength=tree.size)
    start = np.concatenate([[0], np.cumsum(counts)])
    order = np.argsort(par, kind="stable") + 1
    return start, order


def _subtree_sums(tree: TreeState, n: int, centering: float | None) -> np.ndarray:
    """For every particle, the sum over its generation-n descendants of
    (V - c) e^{-V}, with c = 0 (absolute) or c = M (min-centered)."""
    acc = np.zeros(tree.size)
    sl = tree.gen_slice(n)
    v = tree.position[sl]
    acc[sl] = (v - (centering or 0.0)) * np.exp(-v)
    for g in range(n, 0, -1):
        s = tree.gen_slice(g)
        np.add.at(acc, tree.parent[s], acc[s])
    return acc


@dataclass(frozen=True)
class DecompositionTerms:
    """Derivative-martingale mass seen from the argmin.

    ``off_spine_terms[k-1]`` is the brother contribution at generation k of the
    argmin's ancestral line; ``argmin_term`` is the argmin subtree contribution.
    """

    off_spine_terms: np.ndarray
    argmin_term: float
    frak_D: float
    argmin_generation: int
    centering: str


def min_decomposition(tree: TreeState, rec: MinRecord, n: int | None = None,
                      centering: str = "absolute") -> DecompositionTerms:
    """Split e^{M} D_n into brother-subtree terms along the argmin's ancestry.

    With ``centering="absolute"`` the brother term uses
    D^(v) := e^{V(v)} sum_{z >= v, |z|=n} V(z) e^{-V(z)} and e^{-M} frak_D equals
    D_n exactly.  With ``centering="min"`` positions are measured from M, every
    term is non-negative and e^{-M} frak_D equals D_n - M W_n; both versions
    share the same large-n limit because W_n -> 0.
    """
    n = tree.horizon if n is None else n
    if n != tree.horizon:
        raise ValueError("the decomposition is taken at the horizon")
    if centering not in ("absolute", "min"):
        raise ValueError("centering must be 'absolute' or 'min'")
    m = rec.value
    acc = _subtree_sums(tree, n, m if centering == "min" else None)
    chain = _ancestry(tree, rec.argmin_index)
    start, order = _children_index(tree)
    em = math.exp(m)
    terms = np.zeros(len(chain) - 1)
    for k in range(1, len(chain)):
        par, keep = chain[k - 1], chain[k]
        kids = order[start[par]:start[par + 1]]
        kids = kids[kids != keep]
        terms[k - 1] = em * acc[kids].sum()
    argmin_term = em * acc[rec.argmin_index]
    frak = float(terms.sum() + argmin_term)
    return DecompositionTerms(terms, float(argmin_term), frak, rec.argmin_generation, centering)


def truncate_terms(terms: DecompositionTerms, t: int) -> float:
    """Keep only brother terms at generations k in [|u| - t, |u|] plus the argmin term."""
    if t < 0:
        raise ValueError("t must be non-negative")
    g = terms.argmin_generation
    lo = max(g - t, 1)
    sel = terms.off_spine_terms[lo - 1:g]
    return float(sel.sum() + terms.argmin_term)


def frak_D_truncated(tree: TreeState, rec: MinRecord, t: int, centering: str = "min") -> float:
    """Truncated argmin-centered derivative mass on the stored tree.

    Min-centering (the default) makes every term non-negative, so the result
    is nondecreasing in ``t`` and reaches ``frak_D`` once t >= |u|.
    """
    return truncate_terms(min_decomposition(tree, rec, tree.horizon, centering), t)


# ---------------------------------------------------------------------------
# many-tree generation sweeps (vectorized over trees)

@dataclass
class GenerationBatch:
    """Particles of one generation across a batch of trees."""

    n: int
    tree_id: np.ndarray
    position: np.ndarray
    pathmin: np.ndarray


def simulate_generations(spec: PointProcessSpec, n_trees: int, horizon: int,
                         rng: np.random.Generator, cap: int = 5 * 10 ** 7) -> Iterable[GenerationBatch]:
    """Yield generation 0..horizon of ``n_trees`` independent barrier-free trees."""
    sd = spec.sigma_g
    tid = np.arange(n_trees)
    pos = np.zeros(n_trees)
    pm = np.zeros(n_trees)
    yield GenerationBatch(0, tid, pos, pm)
    for g in range(1, horizon + 1):
        nf = pos.shape[0]
        branch = rng.random(nf) < spec.p
        disp = rng.normal(spec.mu, sd, (nf, 2))
        idx = np.flatnonzero(branch)
        pos = (pos[idx, None] + disp[idx]).ravel()
        tid = np.repeat(tid[idx], 2)
        pm = np.minimum(np.repeat(pm[idx], 2), pos)
        if pos.shape[0] > cap:
            raise PopulationCapExceeded(f"generation {g} holds {pos.shape[0]} particles")
        yield GenerationBatch(g, tid, pos, pm)


def per_tree_sum(batch: GenerationBatch, values: np.ndarray, n_trees: int) -> np.ndarray:
    return np.bincount(batch.tree_id, weights=values, minlength=n_trees)


def survival_probability(spec: PointProcessSpec, horizon: int, tol: float = 1e-15) -> float:
    """P(generation ``horizon`` is non-empty), by iterating the offspring pgf.

    f(s) = 1 - p + p s^2 is the generating function of the offspring count;
    P(extinct by n) is its n-fold iterate at 0.
    """
    q = 0.0
    for _ in range(horizon):
        q = 1.0 - spec.p + spec.p * q * q
    return 1.0 - q


REPLICA_FIELDS = ("seed", "replica_id", "n", "W_n", "D_n", "M", "argmin_gen", "frak_D",
                  "killed_mass_bound")


def replica_row(seed: int, replica_id: int, tree: TreeState, rng=None) -> dict:
    n = tree.horizon
    rec = global_min(tree, rng)
    terms = min_decomposition(tree, rec, n)
    return {
        "seed": seed,
        "replica_id": replica_id,
        "n": n,
        "W_n": additive_martingale(tree, n),
        "D_n": derivative_martingale(tree, n),
        "M": rec.value,
        "argmin_gen": rec.argmin_generation,
        "frak_D": terms.frak_D,
        "killed_mass_bound": tree.killed_mass_bound,
    }


def write_replicas(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPLICA_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
