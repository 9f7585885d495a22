"""Spine (size-biased) constructions and the importance sampler for the global minimum.

Under the tilted measure one line of descent, the spine, performs the
centered walk with steps N(0, s2); its parent always branches, and the single
sibling gets an ordinary N(mu, s2) displacement and an ordinary subtree.

The sampler for {M in [-x-1, -x)} sums, over generations k, the event that the
spine vertex w_k is the youngest strict global minimizer, weighted by
exp(V(w_k)).  Subtrees are explored only up to ``slack`` above the candidate;
each particle frozen there at height h starts an independent subtree that
would break the event with probability F(h) = P(M < -h).  The estimator keeps
the conditional probability prod (1 - F(h)) ~ exp(-c sum e^{-h}) with a
self-consistent constant c = lim e^h F(h), solved on the same samples.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy import optimize

from . import _kernels as kern
from .brw_sim import (BarrierPolicy, PopulationCapExceeded, TreeState, simulate_generations,
                      simulate_tree, survival_probability)
from .harness.parallel import block_sizes, map_blocks
from .harness.rng import RngStream
from .harness.stats import Estimate, MeanAccumulator, estimate_from_samples
from .models import PointProcessSpec

__all__ = [
    "SpinePath",
    "simulate_spine",
    "spine_walks",
    "PathFunctional",
    "G_LIBRARY",
    "many_to_one_table",
    "many_to_one_check",
    "REVERSAL_FUNCTIONALS",
    "time_reversal_check",
    "HybridTree",
    "hybrid_sim",
    "MinEventWeight",
    "min_event_weight",
    "depth_proposal",
    "hybrid_min_estimate",
    "SpineRun",
    "run_spine_sampler",
    "solve_frozen_constant",
    "estimate_min_tail",
    "direct_min_tail",
    "RootRun",
    "run_root_candidates",
    "survival_check",
    "DEFAULT_SLACK",
]

DEFAULT_SLACK = 4.0
DEFAULT_BLOCK = 5000
STACK = 1 << 16
UNLIMITED = 1 << 62


# ---------------------------------------------------------------------------
# spine paths

@dataclass(frozen=True)
class SpinePath:
    """Spine positions V(w_0..w_k) and sibling displacements relative to the spine parent."""

    spine_positions: np.ndarray
    sibling_displacements: np.ndarray   # shape (k, 1): one sibling per generation

    @property
    def k(self) -> int:
        return self.spine_positions.size - 1

    def sibling_positions(self) -> np.ndarray:
        return self.spine_positions[:-1, None] + self.sibling_displacements

    def subtree(self, spec: PointProcessSpec, j: int, horizon: int, rng: np.random.Generator,
                barrier: BarrierPolicy | None = None) -> tuple[float, TreeState]:
        """Simulate the ordinary subtree of the sibling born at generation j (1-based).

        Returns (absolute position of the sibling, tree with positions relative to it).
        """
        if not 1 <= j <= self.k:
            raise ValueError(f"sibling generation {j} outside [1, {self.k}]")
        origin = float(self.sibling_positions()[j - 1, 0])
        if barrier is not None and barrier.kind != "none":
            # shift the barrier into the subtree's frame
            barrier = BarrierPolicy("fixed", barrier.level - origin, barrier.x + origin, barrier.slack)
        return origin, simulate_tree(spec, horizon, barrier, rng)


def simulate_spine(spec: PointProcessSpec, k: int, rng: np.random.Generator) -> SpinePath:
    if k < 0:
        raise ValueError("k must be non-negative")
    sd = spec.sigma_g
    steps = rng.normal(0.0, sd, k)
    sibs = rng.normal(spec.mu, sd, (k, 1))
    return SpinePath(np.concatenate([[0.0], np.cumsum(steps)]), sibs)


def spine_walks(spec: PointProcessSpec, n: int, k: int, rng: np.random.Generator,
                tilt: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n spine walks of length k with sibling displacements.

    With ``tilt`` = t the steps are drawn from N(t s2, s2) and the returned
    likelihood ratios exp(-t S_k + k t^2 s2 / 2) restore the spine law.
    Returns (positions (n, k+1), sibling displacements (n, k), weights (n,)).
    """
    s2 = spec.sigma_g2
    steps = rng.normal(tilt * s2, math.sqrt(s2), (n, k))
    sibs = rng.normal(spec.mu, math.sqrt(s2), (n, k))
    pos = np.zeros((n, k + 1))
    np.cumsum(steps, axis=1, out=pos[:, 1:])
    w = np.exp(-tilt * pos[:, -1] + 0.5 * k * tilt * tilt * s2)
    return pos, sibs, w


# ---------------------------------------------------------------------------
# many-to-one

@dataclass(frozen=True)
class PathFunctional:
    """g(V(z_1), ..., V(z_n)) evaluated from the endpoint and the running minimum."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    description: str


G_LIBRARY: dict[str, PathFunctional] = {
    g.name: g for g in (
        PathFunctional("one", lambda last, low: np.ones_like(last), "g = 1"),
        PathFunctional("le0", lambda last, low: (last <= 0).astype(float), "g = 1{S_n <= 0}"),
        PathFunctional("sexp", lambda last, low: last * np.exp(-last), "g = S_n exp(-S_n)"),
        PathFunctional("minpath", lambda last, low: (low >= -1.0).astype(float),
                       "g = 1{min_{j<=n} S_j >= -1}"),
    )
}


def _functional(tag: str) -> PathFunctional:
    try:
        return G_LIBRARY[tag]
    except KeyError:
        raise ValueError(f"unregistered path functional {tag!r}; known: {sorted(G_LIBRARY)}") from None


def many_to_one_table(spec: PointProcessSpec, n_max: int, tags, N: int, rng: np.random.Generator,
                      tilt: float = 0.5, chunk: int = 100_000) -> dict:
    """Both sides of the many-to-one formula for every tag and every n in 1..n_max.

    Tree side: mean over N trees of sum_{|z|=n} g.  Walk side: mean over N
    walks of exp(S_n) g, with the walk sampled under an exponential tilt
    (``tilt``) and reweighted, which tames the log-normal tail of exp(S_n).
    Returns {(tag, n): (lhs Estimate, rhs Estimate)}.
    """
    fns = {t: _functional(t) for t in tags}
    lhs = {(t, n): MeanAccumulator() for t in fns for n in range(1, n_max + 1)}
    rhs = {(t, n): MeanAccumulator() for t in fns for n in range(1, n_max + 1)}
    left = N
    while left > 0:
        m = min(chunk, left)
        for batch in simulate_generations(spec, m, n_max, rng):
            if batch.n == 0:
                continue
            for t, g in fns.items():
                vals = g.fn(batch.position, batch.pathmin)
                lhs[t, batch.n].add(np.bincount(batch.tree_id, weights=vals, minlength=m))
        for n in range(1, n_max + 1):
            pos, _, w = spine_walks(spec, m, n, rng, tilt)
            last, low = pos[:, -1], pos.min(axis=1)
            for t, g in fns.items():
                rhs[t, n].add(np.exp(last) * g.fn(last, low) * w)
        left -= m
    return {key: (lhs[key].estimate("tree"), rhs[key].estimate("spine-walk")) for key in lhs}


def many_to_one_check(spec: PointProcessSpec, n: int, g_tag: str, N: int, rng: np.random.Generator,
                      tilt: float = 0.5) -> tuple[Estimate, Estimate]:
    if n < 1:
        raise ValueError("n must be at least 1")
    _functional(g_tag)
    return many_to_one_table(spec, n, [g_tag], N, rng, tilt)[g_tag, n]


# ---------------------------------------------------------------------------
# time reversal

@dataclass(frozen=True)
class ReversalFunctional:
    name: str
    fn: Callable
    reads_subtrees: bool = False


def _sib_subtree_positive(spec, rng):
    """Functional reading a two-generation sibling subtree: it stays >= 0."""

    def fn(pos, sibs):
        n = pos.shape[0]
        start = pos[:, 0] + sibs[:, 0]
        ok = start >= 0
        branch = rng.random(n) < spec.p
        kids = start[:, None] + rng.normal(spec.mu, spec.sigma_g, (n, 2))
        ok &= ~branch | (kids.min(axis=1) >= 0)
        return ok.astype(float)

    return fn


REVERSAL_FUNCTIONALS: dict[str, ReversalFunctional] = {
    f.name: f for f in (
        ReversalFunctional("endpoint", lambda pos, sibs: pos[:, -1]),
        ReversalFunctional("max_below_zero", lambda pos, sibs: (pos[:, 1:].max(axis=1) < 0).astype(float)),
        ReversalFunctional("exp_first_step", lambda pos, sibs: np.exp(pos[:, 1]) * (sibs.shape[1] >= 1)),
        ReversalFunctional("sibling_subtree_positive", None, reads_subtrees=True),
    )
}


def _reverse(pos: np.ndarray, sibs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(V(w_k) - V(w_{k-i}))_i with the (step, sibling) pairs in reverse order."""
    rev = pos[:, -1:] - pos[:, ::-1]
    return rev, sibs[:, ::-1]


def time_reversal_check(spec: PointProcessSpec, k: int, functional_tag: str, N: int,
                        rng: np.random.Generator, allow_subtrees: bool = False) -> tuple[Estimate, Estimate]:
    """phi on the spine path and on its time reversal; equal in law."""
    if k < 1:
        raise ValueError("k must be at least 1")
    try:
        f = REVERSAL_FUNCTIONALS[functional_tag]
    except KeyError:
        raise ValueError(f"unregistered functional {functional_tag!r}") from None
    if f.reads_subtrees and not allow_subtrees:
        raise ValueError(f"{functional_tag!r} reads subtree data; pass allow_subtrees=True to enable it")
    fn = _sib_subtree_positive(spec, rng) if f.reads_subtrees else f.fn
    pos, sibs, _ = spine_walks(spec, N, k, rng)
    fwd = fn(pos, sibs)
    # the reversed image is evaluated on an independent copy so the two
    # estimates are independent samples of the two sides
    pos2, sibs2, _ = spine_walks(spec, N, k, rng)
    rpos, rsibs = _reverse(pos2, sibs2)
    rev = fn(rpos, rsibs)
    return estimate_from_samples(fwd, "forward"), estimate_from_samples(rev, "reversed")


# ---------------------------------------------------------------------------
# hybrid trees and the min-event weight

@dataclass(frozen=True)
class HybridTree:
    """A tree whose first k generations follow the spine construction.

    ``spine`` holds the arena indices of w_0..w_k.
    """

    tree: TreeState
    spine: np.ndarray
    k: int
    barrier_x: float = 0.0

    @property
    def spine_positions(self) -> np.ndarray:
        return self.tree.position[self.spine]


def hybrid_sim(spec: PointProcessSpec, k: int, horizon: int, barrier: BarrierPolicy | None,
               rng: np.random.Generator, cap: int = 10 ** 8) -> HybridTree:
    """Spine construction to generation k, ordinary branching afterwards.

    The barrier kills ordinary particles only; the spine is never killed, so
    the killed-mass bound covers everything that was dropped.  Particles
    still alive at the horizon are added to the bound as well.
    """
    if not 0 <= k <= horizon:
        raise ValueError("need 0 <= k <= horizon")
    barrier = barrier or BarrierPolicy.none()
    level = barrier.level
    sd = spec.sigma_g
    positions = [np.zeros(1)]
    parents = [np.full(1, -1, dtype=np.int64)]
    offsets = [0, 1]
    spine = [0]
    front = positions[0]
    front_start = 0
    total = 1
    killed_bound = 0.0
    killed = 0
    sp_local = 0  # spine index within the current frontier
    for g in range(1, horizon + 1):
        nf = front.shape[0]
        branch = rng.random(nf) < spec.p
        disp = rng.normal(spec.mu, sd, (nf, 2))
        on_spine = g <= k
        if on_spine:
            branch[sp_local] = True
            disp[sp_local, 0] = rng.normal(0.0, sd)
        idx = np.flatnonzero(branch)
        child = (front[idx, None] + disp[idx]).ravel()
        par = np.repeat(idx + front_start, 2)
        is_spine = np.zeros(child.shape[0], dtype=bool)
        if on_spine:
            is_spine[2 * int(np.searchsorted(idx, sp_local))] = True
        if level < math.inf:
            over = (child > level) & ~is_spine
            if over.any():
                killed_bound += float(np.exp(-(barrier.x + child[over])).sum())
                killed += int(over.sum())
                child, par, is_spine = child[~over], par[~over], is_spine[~over]
        if total + child.shape[0] > cap:
            raise PopulationCapExceeded(f"population exceeds cap {cap} at generation {g}")
        if on_spine:
            sp_local = int(np.flatnonzero(is_spine)[0])
            spine.append(total + sp_local)
        positions.append(child)
        parents.append(par)
        front_start = total
        total += child.shape[0]
        offsets.append(total)
        front = child
    if front.size and level < math.inf:
        killed_bound += float(np.exp(-(barrier.x + front)).sum())
    pos = np.concatenate(positions)
    par = np.concatenate(parents)
    gens = np.repeat(np.arange(horizon + 1, dtype=np.int32), np.diff(offsets))
    tree = TreeState(par, gens, pos, np.asarray(offsets, dtype=np.int64), horizon,
                     None if level == math.inf else level, killed_bound, killed)
    return HybridTree(tree, np.asarray(spine, dtype=np.int64), k, barrier.x)


@dataclass(frozen=True)
class MinEventWeight:
    k: int
    indicator: bool
    weight: float
    ties: int = 1


def min_event_weight(hybrid: HybridTree, x: float, rel_tol: float = 1e-9) -> MinEventWeight:
    """Indicator that w_k is the youngest strict global minimizer with V(w_k) in [-x-1, -x),
    and the weight exp(V(w_k) + x) / N_k(M)."""
    tree, k = hybrid.tree, hybrid.k
    v = float(tree.position[hybrid.spine[k]])
    m = float(tree.position.min())
    tol = rel_tol * max(abs(m), 1e-300)
    earlier = tree.position[: tree.offsets[k]]
    strict = earlier.size == 0 or v < float(earlier.min()) - tol
    ok = strict and v <= m + tol and -x - 1.0 <= v < -x
    if not ok:
        return MinEventWeight(k, False, 0.0, 0)
    gen_k = tree.generation_positions(k)
    ties = int((gen_k <= m + tol).sum())
    return MinEventWeight(k, True, math.exp(v + x) / ties, ties)


def depth_proposal(k_max: int, mean: float = 12.0) -> np.ndarray:
    """Geometric proposal over k = 1..k_max (index 0 unused)."""
    r = 1.0 / mean
    q = np.zeros(k_max + 1)
    q[1:] = r * (1.0 - r) ** np.arange(k_max)
    q /= q.sum()
    return q


def hybrid_min_estimate(spec: PointProcessSpec, x: float, k_max: int, N: int, rng: np.random.Generator,
                        slack: float = 3.0, tail_horizon: int = 30, proposal: np.ndarray | None = None,
                        frozen_constant: float = 0.0, cap: int = 2_000_000) -> tuple[Estimate, dict]:
    """P(M in [-x-1, -x)) from depth-randomized hybrid trees.

    Each replica draws k from ``proposal``, builds a hybrid tree killed above
    -x + slack and stopped ``tail_horizon`` generations after k, and scores
    e^{-x} weight / q(k).  Particles that were killed or still alive at the
    horizon at heights y_i multiply the score by exp(-c sum e^{V(w_k) - y_i}),
    the conditional chance that their subtrees stay above the candidate when
    ``frozen_constant`` = c.  Replicas whose tree exceeds ``cap`` nodes are
    scored zero and counted.
    """
    q = depth_proposal(k_max) if proposal is None else np.asarray(proposal, dtype=float)
    barrier = BarrierPolicy.adaptive(x, slack)
    ks = rng.choice(np.arange(q.size), size=N, p=q)
    vals = np.zeros(N)
    hist = np.zeros(q.size, dtype=np.int64)
    ties = capped = 0
    for i, k in enumerate(ks):
        try:
            h = hybrid_sim(spec, int(k), int(k) + tail_horizon, barrier, rng, cap)
        except PopulationCapExceeded:
            capped += 1
            continue
        w = min_event_weight(h, x)
        if w.indicator:
            frozen = w.weight * w.ties * h.tree.killed_mass_bound
            vals[i] = math.exp(-x) * w.weight * math.exp(-frozen_constant * frozen) / q[k]
            hist[k] += 1
            ties += w.ties > 1
    info = {"depth_histogram": hist, "capped": capped, "tie_events": ties}
    return estimate_from_samples(vals, "hybrid-depth-randomized"), info


# ---------------------------------------------------------------------------
# the shared-spine sampler

@dataclass
class SpineRun:
    """Passing candidates of a shared-spine run, concatenated in block order.

    Candidate c belongs to sample ``sample[c]`` and sits at depth
    u = -(V(w_k) + x_min); its raw weight is e^{-u}.  ``frozen`` is the
    candidate's frozen mass sum exp(V(w_k) - y), ``own`` and ``rest`` are the
    min-centered stopping-line sums of its own subtree and of sibling terms
    outside the recorded window; recorded terms are
    ``term_off/term_val[start:start+count]``.  When the run was asked for a
    fixed set of truncation levels, the raw terms are replaced by per-candidate
    partial sums ``partial[:, j]`` over offsets <= ``partial_t[j]``.
    """

    x_min: float
    depth: int
    slack: float
    n_samples: int
    seed: int
    sample: np.ndarray
    u: np.ndarray
    gen: np.ndarray
    own: np.ndarray
    rest: np.ndarray
    frozen: np.ndarray
    start: np.ndarray
    count: np.ndarray
    term_off: np.ndarray
    term_val: np.ndarray
    killed_bound: np.ndarray   # per sample
    counters: dict = field(default_factory=dict)
    record_window: int = 0
    partial_t: tuple = ()
    partial: np.ndarray | None = None

    def weights(self, c_frozen: float) -> np.ndarray:
        return np.exp(-self.u) * np.exp(-c_frozen * self.frozen)

    def levels(self) -> np.ndarray:
        return self.x_min + np.arange(self.depth)

    def per_sample(self, i: int, J: int, c_frozen: float) -> np.ndarray:
        """Per-sample values of e^{x} 1{M in [-x-J, -x)} for x = x_min + i (J clipped to the window)."""
        lo, hi = i, min(i + J, self.depth)
        keep = (self.u >= lo) & (self.u < hi)
        w = self.weights(c_frozen)[keep] * math.exp(i)
        return np.bincount(self.sample[keep], weights=w, minlength=self.n_samples)

    def tail_estimate(self, i: int, J: int, c_frozen: float) -> Estimate:
        return estimate_from_samples(self.per_sample(i, J, c_frozen), "spine-is", self.seed)

    def line_terms(self, t: int | None = None) -> np.ndarray:
        """Min-centered derivative mass of every candidate; sibling terms with
        generation offset > t are dropped when t is given (offset 0 is the
        argmin generation itself)."""
        if self.partial_t:
            key = self.record_window if t is None else min(int(t), self.record_window)
            if key not in self.partial_t:
                raise ValueError(f"t = {t} was not recorded; available: {self.partial_t}")
            col = self.partial[:, self.partial_t.index(key)]
            return self.own + col + (self.rest if t is None else 0.0)
        out = self.own + (self.rest if t is None else 0.0)
        ends = self.start + self.count
        csum = np.concatenate([[0.0], np.cumsum(self.term_val)])
        if t is None:
            return out + csum[ends] - csum[self.start]
        keep = np.where(self.term_off <= t, self.term_val, 0.0)
        ksum = np.concatenate([[0.0], np.cumsum(keep)])
        return out + ksum[ends] - ksum[self.start]


def _spine_block(block_id: int, size: int, *, seed: int, p: float, mu: float, sd: float, x_min: float,
                 depth: int, slack: float, margin: float, gen_cap: int, record_terms: bool,
                 record_window: int, keep_t: tuple):
    rng = RngStream(seed, block_id).generator()
    out = kern.spine_min_batch(rng, size, p, mu, sd, x_min, depth, slack, False, 0.0, margin,
                               gen_cap, STACK, record_terms, record_window)
    (_, kbound, cs, cu, cg, co, cr, cst, cc, ckb, to, tv, cnt) = out
    part = None
    if keep_t:
        # collapse the raw terms into partial sums before they leave the worker
        owner = np.repeat(np.arange(cc.size), cc)
        part = np.empty((cc.size, len(keep_t)))
        for j, t in enumerate(keep_t):
            part[:, j] = np.bincount(owner, weights=np.where(to <= t, tv, 0.0), minlength=cc.size)
        cst = np.zeros_like(cst)
        cc = np.zeros_like(cc)
        # fresh empties: slicing would keep the kernel's growth buffers alive
        to, tv = np.empty(0, dtype=to.dtype), np.empty(0)
    # the kernel returns views of over-allocated buffers; copy to release the slack
    cs, cu, cg, co, cr, cst, cc, ckb = (a.copy() for a in (cs, cu, cg, co, cr, cst, cc, ckb))
    return size, kbound, cs, cu, cg, co, cr, cst, cc, ckb, to, tv, cnt, part


def run_spine_sampler(spec: PointProcessSpec, x_min: float, depth: int, N: int, seed: int,
                      slack: float = DEFAULT_SLACK, record_terms: bool = False, record_window: int = 30,
                      k_max: int | None = None, workers: int | None = None, block: int = DEFAULT_BLOCK,
                      margin: float = 2.0, t_grid=None) -> SpineRun:
    """Run the shared-spine sampler for candidates in [-x_min-depth, -x_min).

    With ``record_terms`` and a ``t_grid``, only the partial sums at those
    truncation levels (and at the full window) are kept, which cuts memory by
    an order of magnitude at large N.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if x_min < 0:
        raise ValueError("x_min must be non-negative")
    keep_t = ()
    if record_terms and t_grid is not None:
        keep_t = tuple(sorted({min(int(t), int(record_window)) for t in t_grid} | {int(record_window)}))
    fn = partial(_spine_block, seed=int(seed), p=spec.p, mu=spec.mu, sd=spec.sigma_g, x_min=float(x_min),
                 depth=int(depth), slack=float(slack), margin=float(margin),
                 gen_cap=UNLIMITED if k_max is None else int(k_max), record_terms=bool(record_terms),
                 record_window=int(record_window), keep_t=keep_t)
    parts = map_blocks(fn, block_sizes(N, block), workers)
    offset = 0
    toff = 0
    cols = {k: [] for k in ("sample", "u", "gen", "own", "rest", "frozen", "start", "count",
                            "term_off", "term_val", "kb", "partial")}
    counters = np.zeros(5, dtype=np.int64)
    for size, kbound, cs, cu, cg, co, cr, cst, cc, ckb, to, tv, cnt, part in parts:
        cols["sample"].append(cs + offset)
        cols["u"].append(cu)
        cols["gen"].append(cg)
        cols["own"].append(co)
        cols["rest"].append(cr)
        cols["frozen"].append(ckb)
        cols["start"].append(cst + toff)
        cols["count"].append(cc)
        cols["term_off"].append(to)
        cols["term_val"].append(tv)
        cols["kb"].append(kbound)
        if part is not None:
            cols["partial"].append(part)
        offset += size
        toff += tv.size
        counters += cnt
    del parts
    cat = {}
    for k in list(cols):
        # concatenate column by column so block copies are released as we go
        v = cols.pop(k)
        cat[k] = np.concatenate(v) if v else np.empty(0)
        del v
    names = ("truncated", "capped", "nodes", "candidates_seen", "jumps")
    return SpineRun(float(x_min), int(depth), float(slack), int(N), int(seed), cat["sample"].astype(np.int64),
                    cat["u"], cat["gen"].astype(np.int64), cat["own"], cat["rest"], cat["frozen"],
                    cat["start"].astype(np.int64), cat["count"].astype(np.int64),
                    cat["term_off"].astype(np.int64), cat["term_val"], cat["kb"],
                    {k: int(v) for k, v in zip(names, counters)},
                    int(record_window) if record_terms else 0, keep_t,
                    cat["partial"] if keep_t else None)


def solve_frozen_constant(run: SpineRun, indices, J: int, lo: float = 0.0, hi: float = 2.0) -> float:
    """The constant c with c = mean_i e^{x_i} P_c(M in [-x_i-J, -x_i)).

    The right side is decreasing in c, so the fixed point is unique.
    """
    idx = list(indices)

    def gap(c):
        return np.mean([run.per_sample(i, J, c).mean() for i in idx]) - c

    if gap(lo) <= 0:
        return lo
    return float(optimize.brentq(gap, lo, hi, xtol=1e-10))


def estimate_min_tail(spec: PointProcessSpec, x: float, k_max: int | None, N: int, seed: int,
                      J: int = 8, slack: float = DEFAULT_SLACK, workers: int | None = None,
                      frozen_constant: float | None = None) -> Estimate:
    """P(M <= -x) by the shared-spine sampler.

    Sums the interval probabilities for [-x-j-1, -x-j), j < J; the remainder
    P(M < -x-J) <= e^{-(x+J)} is reported as ``truncation_bound``.
    """
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        # the root sits at 0, so M <= 0 surely
        return Estimate(1.0, 0.0, 1.0, 1.0, float(N), int(N), "exact-root", seed,
                        {"truncation_bound": 0.0, "exm_phat": 1.0})
    run = run_spine_sampler(spec, x, J, N, seed, slack, k_max=k_max, workers=workers)
    c = solve_frozen_constant(run, [0], J) if frozen_constant is None else float(frozen_constant)
    est = run.tail_estimate(0, J, c).scaled(math.exp(-x))
    trunc = math.exp(-(x + J))
    frac = run.counters["truncated"] / max(N, 1)
    if frac > 0:
        worst = frac * float(run.per_sample(0, J, c).max()) * math.exp(-x)
        if worst > 0.1 * est.stderr:
            warnings.warn(f"k_max truncation may contribute {worst:.3g}, above 10% of the stderr",
                          RuntimeWarning)
    intervals = []
    for j in range(J):
        e = run.tail_estimate(j, 1, c).scaled(math.exp(-(x + j)))
        intervals.append({"lower": -x - j - 1.0, "upper": -x - j, "p_hat": e.value, "stderr": e.stderr})
    extra = {"truncation_bound": trunc, "exm_phat": est.value * math.exp(x), "frozen_constant": c,
             "intervals": intervals, "killed_mass_bound": float(run.killed_bound.mean()) * math.exp(-x), **run.counters}
    return Estimate(est.value, est.stderr, est.ci_low, est.ci_high, est.n_effective, est.n_samples,
                    "spine-is", seed, extra)


def _direct_block(block_id: int, size: int, *, seed: int, p: float, mu: float, sd: float, floor: float,
                  barrier: float):
    rng = RngStream(seed, block_id).generator()
    mn, st, nodes, killed = kern.direct_min_batch(rng, size, p, mu, sd, floor, barrier, UNLIMITED, STACK)
    return mn, killed, int((st == kern.EXIT_CAP).sum())


def direct_min_tail(spec: PointProcessSpec, xs, N: int, seed: int, barrier: float = 4.0,
                    frozen_constant: float = 0.0, workers: int | None = None,
                    block: int = 20_000) -> list[Estimate]:
    """Direct P-measure estimates of e^x P(M <= -x) on trees killed above ``barrier``.

    With a positive ``frozen_constant`` c, a tree whose killed particles sit
    at y_i scores 1 - exp(-c e^{-x} sum e^{-y_i}) instead of 0 when its
    minimum stays above -x (the same conditional correction as the spine
    sampler); with c = 0 this is the plain killed-model frequency.
    """
    xs = [float(v) for v in np.atleast_1d(xs)]
    fn = partial(_direct_block, seed=int(seed), p=spec.p, mu=spec.mu, sd=spec.sigma_g,
                 floor=-max(xs), barrier=float(barrier))
    parts = map_blocks(fn, block_sizes(N, block), workers)
    mn = np.concatenate([q[0] for q in parts])
    killed = np.concatenate([q[1] for q in parts])
    capped = sum(q[2] for q in parts)
    if capped:
        raise RuntimeError(f"{capped} trees overflowed the exploration stack")
    out = []
    for x in xs:
        hit = mn <= -x
        vals = np.where(hit, 1.0, -np.expm1(-frozen_constant * math.exp(-x) * killed))
        est = estimate_from_samples(math.exp(x) * vals, "direct", seed)
        est.extra.update({"x": x, "barrier": barrier,
                          "killed_mass_bound": float(math.exp(x) * (math.exp(-x) * killed[~hit]).sum() / N)})
        out.append(est)
    return out


@dataclass
class RootRun:
    """Trees whose root is the global minimum (M = 0), explored up to ``slack``."""

    n_samples: int
    passed: np.ndarray
    frozen: np.ndarray
    line: np.ndarray
    slack: float


def _root_block(block_id: int, size: int, *, seed: int, p: float, mu: float, sd: float, slack: float):
    rng = RngStream(seed, block_id).generator()
    ok, kb, line, _ = kern.root_candidate_batch(rng, size, p, mu, sd, slack, STACK)
    return ok, kb, line


def run_root_candidates(spec: PointProcessSpec, N: int, seed: int, slack: float = DEFAULT_SLACK,
                        workers: int | None = None, block: int = 20_000) -> RootRun:
    fn = partial(_root_block, seed=int(seed), p=spec.p, mu=spec.mu, sd=spec.sigma_g, slack=float(slack))
    parts = map_blocks(fn, block_sizes(N, block), workers)
    return RootRun(int(N), np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts]),
                   np.concatenate([q[2] for q in parts]), float(slack))


def survival_check(spec: PointProcessSpec, k: int, N: int, rng: np.random.Generator) -> tuple[Estimate, float]:
    """E_Q[1/W_k] against P(Z_k > 0): the change of measure applied to h = 1{Z_k >= 1}."""
    vals = np.empty(N)
    for i in range(N):
        h = hybrid_sim(spec, k, k, None, rng)
        vals[i] = 1.0 / float(np.exp(-h.tree.generation_positions(k)).sum())
    return estimate_from_samples(vals, "hybrid-inverse-W"), survival_probability(spec, k)
