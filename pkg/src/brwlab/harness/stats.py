"""Estimates, mergeable accumulators, KS tests and plateau fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps
from scipy.optimize import isotonic_regression

__all__ = [
    "Estimate",
    "MeanAccumulator",
    "merge_accumulators",
    "estimate_from_samples",
    "exact_estimate",
    "combined_stderr",
    "agree",
    "effective_sample_size",
    "KSResult",
    "ks_test",
    "ks_two_sample",
    "weighted_corr",
    "PlateauFit",
    "plateau_fit",
    "isotone_check",
]

Z95 = 1.959963984540054
MIN_EFFECTIVE = 50


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo or exact result with a normal-approximation 95% CI."""

    value: float
    stderr: float
    ci_low: float
    ci_high: float
    n_effective: float
    n_samples: int
    method: str
    seed: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")
        if self.n_effective > self.n_samples + 1e-9:
            raise ValueError("n_effective cannot exceed n_samples")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def scaled(self, factor: float) -> "Estimate":
        lo, hi = sorted((self.ci_low * factor, self.ci_high * factor))
        return Estimate(self.value * factor, self.stderr * abs(factor), lo, hi,
                        self.n_effective, self.n_samples, self.method, self.seed, dict(self.extra))

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["extra"]:
            d.pop("extra")
        return d


def _make(value: float, se: float, n_eff: float, n: int, method: str, seed) -> Estimate:
    return Estimate(float(value), float(se), float(value - Z95 * se), float(value + Z95 * se),
                    float(n_eff), int(n), method, seed)


def exact_estimate(value: float, bound: float = 0.0, method: str = "exact") -> Estimate:
    """An exact value; ``bound`` is a deterministic error bound, reported as the CI."""
    return Estimate(float(value), 0.0, float(value - bound), float(value + bound), 1.0, 1, method)


@dataclass
class MeanAccumulator:
    """Running (count, sum, sum of squares) for one or more scalar statistics.

    Merging two accumulators is plain addition, so a fixed merge order gives
    bit-identical results regardless of how blocks were scheduled.
    """

    count: int = 0
    total: np.ndarray | float = 0.0
    total_sq: np.ndarray | float = 0.0

    def add(self, samples: np.ndarray) -> "MeanAccumulator":
        s = np.asarray(samples, dtype=float)
        self.count += s.shape[0]
        self.total = self.total + s.sum(axis=0)
        self.total_sq = self.total_sq + (s * s).sum(axis=0)
        return self

    def merge(self, other: "MeanAccumulator") -> "MeanAccumulator":
        return MeanAccumulator(self.count + other.count, self.total + other.total,
                               self.total_sq + other.total_sq)

    @property
    def mean(self):
        return self.total / max(self.count, 1)

    @property
    def stderr(self):
        n = self.count
        if n < 2:
            return np.zeros_like(np.asarray(self.mean, dtype=float)) + np.inf
        var = (self.total_sq - self.total * self.total / n) / (n - 1)
        return np.sqrt(np.maximum(var, 0.0) / n)

    def estimate(self, method: str, seed: int | None = None, index: int | None = None) -> Estimate:
        m, se = self.mean, self.stderr
        if index is not None:
            m, se = m[index], se[index]
        return _make(m, se, self.count, self.count, method, seed)


def merge_accumulators(accs: Sequence[MeanAccumulator]) -> MeanAccumulator:
    """Left fold in the given (block id) order."""
    out = MeanAccumulator()
    for a in accs:
        out = out.merge(a)
    return out


def estimate_from_samples(samples, method: str, seed: int | None = None) -> Estimate:
    return MeanAccumulator().add(np.asarray(samples, dtype=float)).estimate(method, seed)


def combined_stderr(*ests: Estimate) -> float:
    return math.sqrt(sum(e.stderr ** 2 for e in ests))


def agree(a: Estimate, b: Estimate, k: float = 3.0, slack: float = 0.0) -> bool:
    """True when |a - b| <= k combined stderr (+ a deterministic slack)."""
    return abs(a.value - b.value) <= k * combined_stderr(a, b) + slack


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if s <= 0:
        return 0.0
    return float(s * s / np.dot(w, w))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    n_effective: float


def _weighted_ecdf_distance(x, w, cdf) -> float:
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order] / w.sum()
    upper = np.cumsum(ws)
    lower = upper - ws
    f = cdf(xs)
    return float(max(np.max(upper - f), np.max(f - lower)))


def ks_test(samples, reference, weights=None) -> KSResult:
    """One-sample KS test against a frozen scipy distribution or a cdf callable.

    With weights, the statistic uses the weighted ECDF and the p-value uses the
    asymptotic Kolmogorov law at the effective sample size.
    """
    x = np.asarray(samples, dtype=float)
    cdf = reference.cdf if hasattr(reference, "cdf") else reference
    if weights is None:
        if x.size < MIN_EFFECTIVE:
            raise ValueError(f"KS test needs at least {MIN_EFFECTIVE} samples, got {x.size}")
        res = sps.kstest(x, cdf)
        return KSResult(float(res.statistic), float(res.pvalue), float(x.size))
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    n_eff = effective_sample_size(w)
    if n_eff < MIN_EFFECTIVE:
        raise ValueError(f"KS test needs at least {MIN_EFFECTIVE} effective samples, got {n_eff:.1f}")
    d = _weighted_ecdf_distance(x, w, cdf)
    p = float(sps.kstwobign.sf(d * math.sqrt(n_eff)))
    return KSResult(d, p, n_eff)


def ks_two_sample(a, b, weights_a=None, weights_b=None) -> KSResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if weights_a is None and weights_b is None:
        if min(a.size, b.size) < MIN_EFFECTIVE:
            raise ValueError(f"KS test needs at least {MIN_EFFECTIVE} samples per side")
        res = sps.ks_2samp(a, b)
        n = a.size * b.size / (a.size + b.size)
        return KSResult(float(res.statistic), float(res.pvalue), float(n))
    wa = np.ones_like(a) if weights_a is None else np.asarray(weights_a, dtype=float)
    wb = np.ones_like(b) if weights_b is None else np.asarray(weights_b, dtype=float)
    na, nb = effective_sample_size(wa), effective_sample_size(wb)
    if min(na, nb) < MIN_EFFECTIVE:
        raise ValueError(f"KS test needs at least {MIN_EFFECTIVE} effective samples per side")
    grid = np.concatenate([a, b])
    grid.sort()

    def ecdf(x, w):
        order = np.argsort(x, kind="stable")
        cw = np.concatenate([[0.0], np.cumsum(w[order]) / w.sum()])
        return cw[np.searchsorted(x[order], grid, side="right")]

    d = float(np.max(np.abs(ecdf(a, wa) - ecdf(b, wb))))
    n = na * nb / (na + nb)
    return KSResult(d, float(sps.kstwobign.sf(d * math.sqrt(n))), n)


def weighted_corr(x, y, weights) -> float:
    x, y, w = (np.asarray(v, dtype=float) for v in (x, y, weights))
    w = w / w.sum()
    mx, my = np.dot(w, x), np.dot(w, y)
    cov = np.dot(w, (x - mx) * (y - my))
    vx, vy = np.dot(w, (x - mx) ** 2), np.dot(w, (y - my) ** 2)
    if vx <= 0 or vy <= 0:
        return 0.0
    return float(cov / math.sqrt(vx * vy))


@dataclass(frozen=True)
class PlateauFit:
    level: float
    level_stderr: float
    slope: float
    drift: float
    window: tuple[float, float]
    flagged: bool

    @property
    def relative_drift(self) -> float:
        return abs(self.drift) / abs(self.level) if self.level else math.inf


def plateau_fit(x, y, stderr, window: tuple[float, float] | None = None,
                tolerance: float = 0.10) -> PlateauFit:
    """Weighted constant fit over the top half of the grid (or an explicit window).

    Drift is the weighted linear slope times the window width; the fit is
    flagged when |drift| exceeds ``tolerance`` times the level.
    """
    x, y, se = (np.asarray(v, dtype=float) for v in (x, y, stderr))
    if x.size < 4:
        raise ValueError("plateau_fit needs at least 4 grid points")
    if window is None:
        keep = np.arange(x.size) >= x.size // 2
    else:
        keep = (x >= window[0]) & (x <= window[1])
    xw, yw = x[keep], y[keep]
    # a zero stderr would dominate the weights; floor it at a tiny fraction of the scale
    floor = 1e-12 * max(1.0, float(np.max(np.abs(yw))))
    w = 1.0 / np.maximum(se[keep], floor) ** 2
    level = float(np.dot(w, yw) / w.sum())
    level_se = float(1.0 / math.sqrt(w.sum()))
    if xw.size >= 2 and np.ptp(xw) > 0:
        xm = np.dot(w, xw) / w.sum()
        slope = float(np.dot(w, (xw - xm) * (yw - level)) / np.dot(w, (xw - xm) ** 2))
    else:
        slope = 0.0
    width = float(np.ptp(xw))
    drift = slope * width
    flagged = abs(drift) > tolerance * abs(level)
    return PlateauFit(level, level_se, slope, drift, (float(xw.min()), float(xw.max())), flagged)


def isotone_check(y, stderr, decreasing: bool = True, k: float = 3.0) -> tuple[bool, np.ndarray]:
    """Fit a monotone curve by weighted isotonic regression; pass if every
    residual is within k stderr."""
    y = np.asarray(y, dtype=float)
    se = np.asarray(stderr, dtype=float)
    floor = max(1e-12 * float(np.max(np.abs(y), initial=0.0)), 1e-150)
    w = 1.0 / np.maximum(se, floor) ** 2
    fit = isotonic_regression(y, weights=w, increasing=not decreasing).x
    resid = y - fit
    return bool(np.all(np.abs(resid) <= k * se + 1e-15)), resid


def stack_estimates(ests: Iterable[Estimate]) -> tuple[np.ndarray, np.ndarray]:
    ests = list(ests)
    return np.array([e.value for e in ests]), np.array([e.stderr for e in ests])
