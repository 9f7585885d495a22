"""Tail constants of the global minimum and of the derivative-martingale limit.

Everything here is assembled from one importance-sampled picture of the
tree seen from its global minimum M: the shared-spine sampler supplies
weighted candidates for M in [-depth, 0), and a separate batch of ordinary
trees covers the event M = 0 (the root is the minimum).  Each candidate
carries its derivative mass viewed from the argmin,

    frak_D = sum over the stopping line of (y - M) e^{-(y - M)},

the line being the first particles more than ``slack`` above M.  A frozen
particle at height h holds a subtree whose limit, given that it stays above
M, has mean h + O(1); the O(1) term is close to zero for these models (the
line mean is stable in the slack), so no completion is added.  Then
D_inf = e^{-M} frak_D, and the tails of M and of D_inf come from the same
weighted sample.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from . import _kernels as kern
from .harness.parallel import block_sizes, map_blocks
from .harness.rng import RngStream
from .harness.stats import (Estimate, KSResult, PlateauFit, effective_sample_size, estimate_from_samples,
                            isotone_check, ks_test, ks_two_sample, plateau_fit, weighted_corr)
from .brw_sim import PopulationCapExceeded
from .models import PointProcessSpec
from .spine_sim import (DEFAULT_SLACK, RootRun, SpineRun, run_root_candidates, run_spine_sampler,
                        solve_frozen_constant)

__all__ = [
    "TailCurve",
    "ConditionalSample",
    "MinLawRun",
    "min_law_run",
    "estimate_cM",
    "conditional_min_law",
    "estimate_cDinf",
    "FactorizationReport",
    "factorization_check",
    "SmoothingReport",
    "smoothing_fixed_point_test",
    "line_sums",
    "direct_frak_D",
    "IntegrabilityProfile",
    "integrability_profile",
    "TruncationTable",
    "truncation_profile",
    "CenteringReport",
    "aidekon_centering_check",
    "DEFAULT_DEPTH",
]

DEFAULT_DEPTH = 20
SOLVE_LEVELS = (4, 12)


# ---------------------------------------------------------------------------
# the shared weighted picture

@dataclass
class MinLawRun:
    """Weighted candidates for the global minimum, the root batch and the frozen constant."""

    spine: SpineRun
    root: RootRun
    frozen_constant: float

    @property
    def depth(self) -> int:
        return self.spine.depth

    def weights(self) -> np.ndarray:
        """P-mass carried by each candidate (per spine sample)."""
        return self.spine.weights(self.frozen_constant)

    def root_weights(self) -> np.ndarray:
        return self.root.passed * np.exp(-self.frozen_constant * self.root.frozen)

    def minimum(self) -> np.ndarray:
        return -(self.spine.u + self.spine.x_min)

    def frak_D(self, t: int | None = None) -> np.ndarray:
        """Argmin-centered derivative mass of every candidate; with ``t`` the
        sibling terms born more than t generations before the argmin are dropped."""
        return self.spine.line_terms(t)

    def root_frak_D(self) -> np.ndarray:
        return self.root.line

    def total_mass(self) -> Estimate:
        """P(M = 0) + P(-depth <= M < 0); equals 1 - O(e^{-depth}) when the weights are right."""
        n = self.spine.n_samples
        spine = np.bincount(self.spine.sample, weights=self.weights(), minlength=n)
        a = estimate_from_samples(spine, "spine")
        b = estimate_from_samples(self.root_weights(), "root")
        se = math.hypot(a.stderr, b.stderr)
        v = a.value + b.value
        return Estimate(v, se, v - 1.96 * se, v + 1.96 * se, min(a.n_effective, b.n_effective),
                        min(a.n_samples, b.n_samples), "total-mass")

    def per_sample(self, values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Sum of weight * value over each spine sample's candidates."""
        w = self.weights() * values
        if mask is not None:
            w = np.where(mask, w, 0.0)
        return np.bincount(self.spine.sample, weights=w, minlength=self.spine.n_samples)


def min_law_run(spec: PointProcessSpec, N: int, seed: int, depth: int = DEFAULT_DEPTH,
                slack: float = DEFAULT_SLACK, record_window: int = 30, workers: int | None = None,
                root_samples: int | None = None, frozen_constant: float | None = None,
                t_grid=None) -> MinLawRun:
    """Run the shared-spine sampler over M in [-depth, 0) and the root batch.

    The frozen constant is solved on the levels x in [4, 12) with an 8-wide
    window unless given.  With ``t_grid`` only the truncated masses at those
    levels are stored (enough for :func:`truncation_profile` on that grid).
    """
    if depth < 13:
        raise ValueError("depth must be at least 13 to solve the frozen constant")
    run = run_spine_sampler(spec, 0.0, depth, N, seed, slack, record_terms=True,
                            record_window=record_window, workers=workers, t_grid=t_grid)
    if frozen_constant is None:
        frozen_constant = solve_frozen_constant(run, range(*SOLVE_LEVELS), 8)
    root = run_root_candidates(spec, root_samples or N, seed + 1, slack, workers)
    return MinLawRun(run, root, float(frozen_constant))


# ---------------------------------------------------------------------------
# tail curves

@dataclass
class TailCurve:
    """Raw tail probabilities on a grid and their transform (e^x P or x P) with a plateau fit."""

    x_grid: np.ndarray
    prob: np.ndarray
    prob_stderr: np.ndarray
    transformed: np.ndarray
    transformed_stderr: np.ndarray
    plateau: PlateauFit
    transform: str
    monotone: bool
    extra: dict = field(default_factory=dict)

    @property
    def level(self) -> Estimate:
        se = self.plateau.level_stderr
        return Estimate(self.plateau.level, se, self.plateau.level - 1.96 * se,
                        self.plateau.level + 1.96 * se, float(self.x_grid.size), int(self.x_grid.size),
                        f"plateau-{self.transform}")

    def bracket_ok(self, k: float = 3.0) -> bool:
        """Transformed values lie in (0, 1 + k stderr]."""
        t, s = self.transformed, self.transformed_stderr
        return bool(np.all(t > 0) and np.all(t <= 1.0 + k * s))

    def rows(self):
        for i, x in enumerate(self.x_grid):
            yield {"x": float(x), "p_hat": float(self.prob[i]), "stderr": float(self.prob_stderr[i]),
                   "transformed": float(self.transformed[i]),
                   "transformed_stderr": float(self.transformed_stderr[i])}


def _tail_probs(run: MinLawRun, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = run.minimum()
    probs, ses = [], []
    for x in xs:
        est = estimate_from_samples(run.per_sample(np.ones_like(m), m <= -x), "spine-is")
        probs.append(est.value)
        ses.append(est.stderr)
    return np.array(probs), np.array(ses)


def estimate_cM(spec: PointProcessSpec, x_grid=range(1, 13), N: int = 100_000, seed: int = 0,
                run: MinLawRun | None = None, window: tuple[float, float] | None = None,
                tolerance: float = 0.10, workers: int | None = None) -> TailCurve:
    """e^x P(M <= -x) on ``x_grid`` and its plateau over the top half (or ``window``)."""
    xs = np.asarray(list(x_grid), dtype=float)
    if np.any(np.diff(xs) <= 0) or xs.min() <= 0:
        raise ValueError("x_grid must be positive and increasing")
    if xs.max() > 12:
        raise ValueError("x_grid must stay within x <= 12")
    run = run or min_law_run(spec, N, seed, workers=workers)
    p, se = _tail_probs(run, xs)
    ex = np.exp(xs)
    fit = plateau_fit(xs, p * ex, se * ex, window, tolerance)
    mono, _ = isotone_check(p, se)
    if fit.flagged:
        warnings.warn(f"no plateau: relative drift {fit.relative_drift:.3f}", RuntimeWarning)
    return TailCurve(xs, p, se, p * ex, se * ex, fit, "exp", mono,
                     {"frozen_constant": run.frozen_constant, "truncation_bound": math.exp(-run.depth)})


def estimate_cDinf(spec: PointProcessSpec, x_grid=None, N: int = 100_000, seed: int = 0,
                   run: MinLawRun | None = None, tolerance: float = 0.15,
                   workers: int | None = None) -> TailCurve:
    """x P(D_inf >= x) from D_inf = e^{-M} frak_D over the weighted picture.

    The default grid is x = e^3, ..., e^11.  ``extra["log_integral"]`` holds
    int_0^X P(D >= u) du / ln X = E[min(D, X)] / ln X on the same grid, and
    ``log_integral_spread`` its relative spread over X in [e^3, e^6].
    """
    xs = np.exp(np.arange(3.0, 12.0)) if x_grid is None else np.asarray(list(x_grid), dtype=float)
    if np.any(np.diff(xs) <= 0) or xs.min() <= 0:
        raise ValueError("x_grid must be positive and increasing")
    run = run or min_law_run(spec, N, seed, workers=workers)
    d = np.exp(-run.minimum()) * run.frak_D()
    d_root = run.root_frak_D()
    rw = run.root_weights()
    probs, ses, li, li_se = [], [], [], []
    for x in xs:
        a = estimate_from_samples(run.per_sample((d >= x).astype(float)), "spine")
        b = estimate_from_samples(rw * (d_root >= x), "root")
        probs.append(a.value + b.value)
        ses.append(math.hypot(a.stderr, b.stderr))
        a = estimate_from_samples(run.per_sample(np.minimum(d, x)), "spine")
        b = estimate_from_samples(rw * np.minimum(d_root, x), "root")
        li.append((a.value + b.value) / math.log(x))
        li_se.append(math.hypot(a.stderr, b.stderr) / math.log(x))
    p, se = np.array(probs), np.array(ses)
    fit = plateau_fit(np.log(xs), p * xs, se * xs, None, tolerance)
    mono, _ = isotone_check(p, se)
    if fit.flagged:
        warnings.warn(f"no plateau: relative drift {fit.relative_drift:.3f}", RuntimeWarning)
    li, li_se = np.array(li), np.array(li_se)
    band = (xs >= math.exp(3.0) - 1e-9) & (xs <= math.exp(6.0) + 1e-9)
    sel = li[band] if band.any() else li
    spread = float((sel.max() - sel.min()) / sel.mean())
    return TailCurve(xs, p, se, p * xs, se * xs, fit, "linear", mono,
                     {"log_integral": li, "log_integral_stderr": li_se, "log_integral_spread": spread,
                      "depth_bound": math.exp(-run.depth) * xs.max()})


# ---------------------------------------------------------------------------
# the law of the minimum given a deep minimum

@dataclass
class ConditionalSample:
    """Weighted candidates with M <= -x: overshoots M + x (<= 0) and their frak_D."""

    x: float
    overshoots: np.ndarray
    frak_Ds: np.ndarray
    weights: np.ndarray
    sample_ids: np.ndarray

    @property
    def effective_n(self) -> float:
        return effective_sample_size(self.weights)

    def ratio_estimate(self, values: np.ndarray, n_samples: int) -> Estimate:
        """Weighted mean of ``values`` with a per-sample ratio (delta-method) stderr."""
        num = np.bincount(self.sample_ids, weights=self.weights * values, minlength=n_samples)
        den = np.bincount(self.sample_ids, weights=self.weights, minlength=n_samples)
        r = num.sum() / den.sum()
        resid = num - r * den
        se = math.sqrt(np.sum(resid ** 2)) / den.sum()
        n_eff = min(self.effective_n, float(n_samples))
        return Estimate(float(r), float(se), float(r - 1.96 * se), float(r + 1.96 * se), n_eff, n_samples,
                        "weighted-ratio")


def conditional_sample(run: MinLawRun, x: float, t: int | None = None) -> ConditionalSample:
    m = run.minimum()
    keep = m <= -x
    return ConditionalSample(float(x), (m + x)[keep], run.frak_D(t)[keep], run.weights()[keep],
                             run.spine.sample[keep])


def conditional_min_law(spec: PointProcessSpec, x: float = 8.0, N: int = 100_000, seed: int = 0,
                        run: MinLawRun | None = None, workers: int | None = None) -> tuple[ConditionalSample, dict]:
    """Overshoot law of -(M + x) given M <= -x against Exp(1), and its dependence on frak_D."""
    if x < 4:
        raise ValueError("the conditional law is studied for x >= 4")
    run = run or min_law_run(spec, N, seed, workers=workers)
    cs = conditional_sample(run, x)
    if cs.effective_n < cs.weights.size / 10:
        warnings.warn(f"effective sample size {cs.effective_n:.0f} below a tenth of {cs.weights.size}",
                      RuntimeWarning)
    over = -cs.overshoots
    ks = ks_test(over, stats.expon, cs.weights)
    corr = weighted_corr(over, np.log1p(cs.frak_Ds), cs.weights)
    mean = cs.ratio_estimate(cs.overshoots, run.spine.n_samples)
    frak = cs.ratio_estimate(cs.frak_Ds, run.spine.n_samples)
    report = {"x": float(x), "ks": ks, "corr": float(corr), "overshoot_mean": mean, "frak_D_mean": frak,
              "effective_n": cs.effective_n, "n_candidates": int(cs.weights.size)}
    return cs, report


# ---------------------------------------------------------------------------
# the factorization of the constants

@dataclass(frozen=True)
class FactorizationReport:
    c_M: Estimate
    c_D: Estimate
    frak_D_mean: Estimate
    product: float
    difference: float
    half_width: float
    passes: bool
    perturbation: float = 1.0
    flags: tuple = ()


def factorization_check(c_M: Estimate, c_D: Estimate, frak_D_mean: Estimate, k: float = 3.0,
                        perturbation: float = 1.0, flags=()) -> FactorizationReport:
    """Compare c_D with c_M * E[frak_D] against k times the combined 95% half-width.

    ``perturbation`` multiplies c_M before the comparison (a sensitivity control).
    """
    cm = c_M.value * perturbation
    prod = cm * frak_D_mean.value
    hw = math.sqrt(c_D.half_width ** 2 + (frak_D_mean.value * c_M.half_width * perturbation) ** 2
                   + (cm * frak_D_mean.half_width) ** 2)
    diff = c_D.value - prod
    return FactorizationReport(c_M, c_D, frak_D_mean, prod, diff, hw, bool(abs(diff) <= k * hw),
                               perturbation, tuple(flags))


# ---------------------------------------------------------------------------
# smoothing transform

@dataclass(frozen=True)
class SmoothingReport:
    ks: KSResult
    mean_a: Estimate
    mean_b: Estimate
    median_a: Estimate
    median_b: Estimate
    n_a: int
    n_b: int
    degenerate: bool
    quantile_levels: tuple = ()
    quantiles_a: tuple = ()
    quantiles_b: tuple = ()


def _median_estimate(x: np.ndarray) -> Estimate:
    """Median with a stderr read off the order-statistic band."""
    x = np.sort(x)
    n = x.size
    med = float(np.median(x))
    half = 1.96 * math.sqrt(n) / 2.0
    lo = x[max(int(n / 2 - half), 0)]
    hi = x[min(int(math.ceil(n / 2 + half)), n - 1)]
    se = float(hi - lo) / (2 * 1.96)
    return Estimate(med, se, float(lo), float(hi), float(n), n, "median")


def _line_block(block_id: int, size: int, *, seed: int, p: float, mu: float, sd: float, height: float):
    rng = RngStream(seed, block_id).generator()
    d, w, _, st = kern.line_sum_batch(rng, size, p, mu, sd, height, 1 << 62, 1 << 16)
    if np.any(st == kern.EXIT_CAP):
        raise RuntimeError("line exploration overflowed its stack")
    return d, w


def line_sums(spec: PointProcessSpec, height: float, n: int, seed: int, workers: int | None = None,
              block: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """(sum y e^{-y}, sum e^{-y}) over the first particles above ``height``, for n fresh trees."""
    fn = partial(_line_block, seed=int(seed), p=spec.p, mu=spec.mu, sd=spec.sigma_g, height=float(height))
    parts = map_blocks(fn, block_sizes(n, block), workers)
    return np.concatenate([q[0] for q in parts]), np.concatenate([q[1] for q in parts])


def smoothing_fixed_point_test(spec: PointProcessSpec, height: float = 8.0, N: int = 10_000, seed: int = 0,
                               degenerate: bool = False, align: bool = True,
                               workers: int | None = None) -> SmoothingReport:
    """Two-sample KS between D and sum_{|z|=1} e^{-V(z)} D^(z).

    D is approximated on fresh trees by the stopping-line sum over the first
    particles above ``height``.  Sample B takes one offspring draw and
    independent subtrees; each D^(z) is the subtree's line sum written in the
    parent's coordinates, D^(z) + V(z) W^(z), which has the same limit since
    W vanishes.  With ``align`` the subtree lines sit at height - E[V] so both
    sides cut the tree at the same mean absolute height; without it the test
    resolves the slow drift of the line approximant in the height.
    ``degenerate`` replaces every D^(z) by 0.
    """
    a, _ = line_sums(spec, height, N, seed, workers)
    sub = height - spec.mu if align else height
    d, w = line_sums(spec, sub, 2 * N, seed + 1, workers)
    rng = RngStream(seed, 1 << 20).generator()
    v = rng.normal(spec.mu, spec.sigma_g, (N, 2))
    branch = rng.random(N) < spec.p
    kids = d.reshape(N, 2) + v * w.reshape(N, 2)
    if degenerate:
        kids = np.zeros_like(kids)
    b = np.where(branch, (np.exp(-v) * kids).sum(axis=1), 0.0)
    qs = tuple(float(q) for q in np.round(np.linspace(0.05, 0.95, 19), 2))
    return SmoothingReport(ks_two_sample(a, b), estimate_from_samples(a, "line-sum"),
                           estimate_from_samples(b, "line-sum"), _median_estimate(a), _median_estimate(b),
                           N, N, degenerate, qs, tuple(np.quantile(a, qs)), tuple(np.quantile(b, qs)))


def _line_min_block(block_id: int, size: int, *, seed: int, p: float, mu: float, sd: float, height: float):
    rng = RngStream(seed, block_id).generator()
    d, w, m, st = kern.line_sum_batch(rng, size, p, mu, sd, height, 1 << 62, 1 << 16)
    if np.any(st == kern.EXIT_CAP):
        raise RuntimeError("line exploration overflowed its stack")
    return d, w, m


def direct_frak_D(spec: PointProcessSpec, N: int, seed: int, height: float = 6.0,
                  workers: int | None = None) -> np.ndarray:
    """Unconditioned frak_D = e^{M} sum (y - M) e^{-y} over the first particles above
    ``height`` on fresh trees (M is the minimum of the explored part)."""
    fn = partial(_line_min_block, seed=int(seed), p=spec.p, mu=spec.mu, sd=spec.sigma_g, height=float(height))
    parts = map_blocks(fn, block_sizes(N, 10_000), workers)
    d, w, m = (np.concatenate([q[i] for q in parts]) for i in range(3))
    return np.exp(m) * (d - m * w)


# ---------------------------------------------------------------------------
# integrability and truncation

@dataclass
class IntegrabilityProfile:
    x_grid: np.ndarray
    moments: list          # Estimates of E[frak_D ln^power(1 + frak_D) | M <= -x]
    power: int
    heavy_tail: list       # share of the moment carried by the top 1% of weighted mass

    def flat(self, k: float = 3.0) -> bool:
        """Every entry within k stderr (own plus level) of the weighted mean level."""
        v = np.array([m.value for m in self.moments])
        s = np.array([m.stderr for m in self.moments])
        w = 1.0 / np.maximum(s, 1e-300) ** 2
        level = float(np.dot(w, v) / w.sum())
        level_se = 1.0 / math.sqrt(w.sum())
        return bool(np.all(np.abs(v - level) <= k * np.sqrt(s ** 2 + level_se ** 2)))

    def rows(self):
        for x, m, h in zip(self.x_grid, self.moments, self.heavy_tail):
            yield {"x": float(x), "moment": m.value, "stderr": m.stderr, "top1_share": h}


def _top_share(values: np.ndarray, weights: np.ndarray, q: float = 0.01) -> float:
    total = float(np.dot(values, weights))
    if total <= 0:
        return 0.0
    order = np.argsort(values)[::-1]
    cw = np.cumsum(weights[order]) / weights.sum()
    top = order[: int(np.searchsorted(cw, q)) + 1]
    return float(np.dot(values[top], weights[top]) / total)


def integrability_profile(spec: PointProcessSpec, x_grid=(4, 6, 8, 10), N: int = 100_000, seed: int = 0,
                          power: int = 2, run: MinLawRun | None = None,
                          workers: int | None = None) -> IntegrabilityProfile:
    """E[frak_D ln^power(1 + frak_D) | M <= -x] per x; x = 0 means unconditioned."""
    run = run or min_law_run(spec, N, seed, workers=workers)
    xs = np.asarray(list(x_grid), dtype=float)
    moments, shares = [], []
    for x in xs:
        if x == 0:
            v = _moment(np.concatenate([run.root_frak_D(), run.frak_D()]), power)
            w = np.concatenate([run.root_weights(), run.weights()])
            root_part = estimate_from_samples(run.root_weights() * _moment(run.root_frak_D(), power), "root")
            sp_part = estimate_from_samples(run.per_sample(_moment(run.frak_D(), power)), "spine")
            val = root_part.value + sp_part.value
            se = math.hypot(root_part.stderr, sp_part.stderr)
            est = Estimate(val, se, val - 1.96 * se, val + 1.96 * se, float(run.spine.n_samples),
                           run.spine.n_samples, "weighted-total")
        else:
            cs = conditional_sample(run, x)
            v, w = _moment(cs.frak_Ds, power), cs.weights
            est = cs.ratio_estimate(v, run.spine.n_samples)
        share = _top_share(v, w)
        if share > 0.5:
            warnings.warn(f"top 1% of samples carries {share:.0%} of the moment at x = {x:g}", RuntimeWarning)
        moments.append(est)
        shares.append(share)
    return IntegrabilityProfile(xs, moments, power, shares)


def _moment(d: np.ndarray, power: int) -> np.ndarray:
    return d * np.log1p(d) ** power


@dataclass
class TruncationTable:
    t_grid: np.ndarray
    x_grid: np.ndarray
    table: np.ndarray       # (len(t), len(x))
    stderr: np.ndarray
    epsilon: float

    def monotone_in_t(self) -> bool:
        return bool(np.all(np.diff(self.table, axis=0) <= 1e-15))

    def sup_over_x(self) -> np.ndarray:
        return self.table.max(axis=1)


def truncation_profile(spec: PointProcessSpec, t_grid=(0, 2, 5, 10, 20, 25), x_grid=(4, 6, 8, 10),
                       epsilon: float = 0.05, N: int = 100_000, seed: int = 0, run: MinLawRun | None = None,
                       workers: int | None = None) -> TruncationTable:
    """P(frak_D - frak_D^{>=t} >= epsilon | M <= -x)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    run = run or min_law_run(spec, N, seed, workers=workers)
    ts = np.asarray(list(t_grid), dtype=int)
    xs = np.asarray(list(x_grid), dtype=float)
    window = run.spine.record_window
    if ts.max() > window:
        raise ValueError(f"t up to {ts.max()} needs a record window of at least that size (have {window})")
    full = run.frak_D()
    tab = np.zeros((ts.size, xs.size))
    err = np.zeros_like(tab)
    for i, t in enumerate(ts):
        gap = full - run.frak_D(int(t))
        for j, x in enumerate(xs):
            cs = conditional_sample(run, x)
            keep = run.minimum() <= -x
            est = cs.ratio_estimate((gap[keep] >= epsilon).astype(float), run.spine.n_samples)
            tab[i, j] = est.value
            err[i, j] = est.stderr
    return TruncationTable(ts, xs, tab, err, float(epsilon))


# ---------------------------------------------------------------------------
# centering of the generation minimum

@dataclass(frozen=True)
class CenteringReport:
    n_grid: np.ndarray
    medians: np.ndarray
    coefficient: float
    drift: float


def _generation_minima(spec: PointProcessSpec, n_grid: np.ndarray, N: int, rng: np.random.Generator,
                       cap: int) -> np.ndarray:
    """Exact minimum of generation n for every n in ``n_grid``, per tree (inf after extinction)."""
    pos = np.zeros(N)
    tree = np.arange(N)
    out = np.full((N, n_grid.size), np.inf)
    targets = {int(n): j for j, n in enumerate(n_grid)}
    for g in range(1, int(n_grid.max()) + 1):
        branch = rng.random(pos.size) < spec.p
        parent = np.flatnonzero(branch)
        pos = (pos[parent, None] + rng.normal(spec.mu, spec.sigma_g, (parent.size, 2))).ravel()
        tree = np.repeat(tree[parent], 2)
        if pos.size > cap:
            raise PopulationCapExceeded(f"{pos.size} particles at generation {g} exceed the cap {cap}")
        if pos.size == 0:
            break
        if g in targets:
            mins = np.full(N, np.inf)
            np.minimum.at(mins, tree, pos)
            out[:, targets[g]] = mins
    return out


def aidekon_centering_check(spec: PointProcessSpec, n_grid=(1, 4, 8, 16), N: int = 400,
                            rng: np.random.Generator | None = None, coefficient: float = 1.5,
                            cap: int = 50_000_000) -> CenteringReport:
    """Medians of M_n - coefficient * ln n over trees alive at generation n.

    The populations are simulated in full, which limits n to about 2^4 at
    p = 1 and a few hundred generations for small p.
    """
    rng = rng or np.random.default_rng(0)
    ns = np.asarray(list(n_grid), dtype=int)
    if np.any(np.diff(ns) <= 0) or ns[0] < 1:
        raise ValueError("n_grid must be increasing and start at n >= 1")
    mins = _generation_minima(spec, ns, N, rng, cap)
    med = np.array([np.median(col[np.isfinite(col)]) if np.isfinite(col).any() else np.nan for col in mins.T])
    med = med - coefficient * np.log(ns)
    top = ns >= 4
    drift = float(med[top][-1] - med[top][0]) if top.sum() >= 2 else 0.0
    return CenteringReport(ns, med, coefficient, drift)
