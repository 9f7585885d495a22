"""Numerical checks of the fluctuation-theory statements used by the tail analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from ..harness.stats import Estimate, estimate_from_samples, exact_estimate
from ..models import StepDistribution
from . import lattice
from .ladder import killed_walks, ladder_counts
from .renewal import gaussian_renewal, renewal_handle

__all__ = [
    "HarmonicityResult",
    "IdentityResult",
    "KozlovTable",
    "BallotReport",
    "GreenSumResult",
    "check_harmonicity",
    "check_renewal_identity",
    "lemma_rhs",
    "check_tilde_increment_bound",
    "tilde_increment_sweep",
    "correction_limit",
    "kozlov_check",
    "ballot_bound_check",
    "green_sum",
]


@dataclass(frozen=True)
class HarmonicityResult:
    u: float
    residual: float
    stderr: float
    mode: str
    which: str

    def passes(self, k: float = 3.0, atol: float = 1e-12) -> bool:
        return abs(self.residual) <= k * self.stderr + atol


def check_harmonicity(dist: StepDistribution, u: float, mode: str = "exact", n: int = 1_000_000,
                      rng: np.random.Generator | None = None, which: str = "minus") -> HarmonicityResult:
    """Residual of R(u) - E[R(u + sX); u + sX >= 0], s = +1 for R^-, -1 for R^+.

    exact, lattice: finite sum over the support with the exact tables.
    exact, Gaussian: adaptive quadrature against the Nystrom solution.
    mc: per-walk residual from ladder records (mean exactly zero), any law.
    """
    if u < 0:
        raise ValueError("u must be non-negative")
    if which not in ("minus", "plus"):
        raise ValueError("which must be 'minus' or 'plus'")
    sign = 1 if which == "minus" else -1
    if mode == "mc":
        if rng is None:
            raise ValueError("mc mode needs an rng")
        count, harm, _ = ladder_counts(dist, [u], n, rng, sign)
        r = count[:, 0] - harm[:, 0]
        return HarmonicityResult(float(u), float(r.mean()), float(r.std(ddof=1) / math.sqrt(n)), "mc", which)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    if dist.is_lattice:
        span = int(max(abs(s) for s in dist.support))
        tab = lattice.lattice_renewal(dist, int(math.floor(u)) + span + 1)
        table = tab.R_minus if sign == 1 else tab.R_plus
        rhs = 0.0
        for s, q in zip(dist.support, dist.probs):
            v = u + sign * s
            if v >= 0:
                rhs += q * float(table(v))
        res = float(table(u)) - rhs
        return HarmonicityResult(float(u), res, 0.0, "exact", which)
    gr = gaussian_renewal(dist.sigma, max(50.0, u + 20 * dist.sigma))
    pdf = stats.norm(0.0, dist.sigma).pdf
    val, err = integrate.quad(lambda v: gr(v) * pdf(v - u), 0.0, u + 40 * dist.sigma,
                              points=[u], limit=400, epsabs=1e-12)
    return HarmonicityResult(float(u), gr(u) - val, err + gr.error_bound, "exact", which)


@dataclass(frozen=True)
class IdentityResult:
    x: int
    a: int
    lhs: float
    rhs: float
    residual: float
    bound: float

    @property
    def passes(self) -> bool:
        return abs(self.residual) <= self.bound


def _delta_r_minus(tab: lattice.LatticeRenewal, u: int) -> float:
    return float(tab.R_minus(u) - (tab.R_minus(u - 1) if u >= 1 else 0.0))


def lemma_rhs(tab: lattice.LatticeRenewal, x: int, a: int) -> tuple[float, float]:
    """theta0 R^-(x)(R^+(a) - K_a) + theta0 sum_{u in [x-a, x]} dR^-(u) (K_c - R^+(c)), c = a - x + u.

    The Stieltjes integral is a jump sum: R^- jumps only at integers, with
    dR^-(0) = R^-(0) = 1.  Returns (value, propagated error bound).
    """
    th, th_e = tab.theta0.value, tab.theta0.error_bound
    rm, rm_e = float(tab.R_minus(x)), float(tab.r_minus_err[x])
    rp, rp_e = float(tab.R_plus(a)), float(tab.r_plus_err[a])
    ka, ka_e = float(tab.K(a)), tab.K_err(a)
    head = rp - ka
    val = th * rm * head
    err = th_e * abs(rm * head) + th * rm_e * abs(head) + th * rm * (rp_e + ka_e)
    for u in range(max(0, x - a), x + 1):
        c = a - x + u
        d = _delta_r_minus(tab, u)
        d_e = tab.r_minus_err[u] + (tab.r_minus_err[u - 1] if u >= 1 else 0.0)
        corr = float(tab.K(c)) - float(tab.R_plus(c))
        corr_e = tab.K_err(c) + float(tab.r_plus_err[c])
        val += th * d * corr
        err += th_e * abs(d * corr) + th * d_e * abs(corr) + th * abs(d) * corr_e
    return val, float(err)


def check_renewal_identity(dist: StepDistribution, x: int, a: int) -> IdentityResult:
    """R~(x, a) (by DP) against the renewal-function expression, lattice walks.

    The identity fails at a = 0, which is therefore rejected.
    """
    if a == 0:
        raise ValueError("the identity does not hold for a = 0 (R~(x, 0) = R^-(x) instead); use a > 0")
    if a < 0 or x < 0 or int(a) != a or int(x) != x:
        raise ValueError("x and a must be non-negative integers")
    if not dist.is_lattice:
        raise ValueError("the identity check is offered in lattice mode only")
    x, a = int(x), int(a)
    tab = lattice.lattice_renewal(dist, max(200, x + a + 1))
    lhs, lhs_e = lattice.tilde_R_exact(dist, x, [a])
    rhs, rhs_e = lemma_rhs(tab, x, a)
    return IdentityResult(x, a, float(lhs[0]), rhs, float(lhs[0] - rhs),
                          float(lhs_e[0] + rhs_e + 1e-12 * (1 + abs(rhs))))


def correction_limit(dist: StepDistribution, a: int, x_large: int = 150) -> tuple[float, float]:
    """(correction term at large x, its limit C^- sum_{c<a}(K_c - R^+(c)))

    The correction is the theta0-weighted jump sum in :func:`lemma_rhs`.  For
    an aperiodic lattice walk the increments of R^- converge to C^- = 1/E|H^-|
    (Blackwell), so the sum tends to theta0 C^- sum_{c=0}^{a} (K_c - R^+(c)).
    """
    tab = lattice.lattice_renewal(dist, max(200, x_large + a + 1))
    th = tab.theta0.value
    corr = 0.0
    for u in range(x_large - a, x_large + 1):
        c = a - x_large + u
        corr += th * _delta_r_minus(tab, u) * float(tab.K(c) - tab.R_plus(c))
    h, _ = lattice.ladder_law(dist, +1)
    c_minus = 1.0 / float(np.dot(np.arange(1, h.size + 1), h))
    limit = th * c_minus * sum(float(tab.K(c) - tab.R_plus(c)) for c in range(0, a + 1))
    return corr, limit


def check_tilde_increment_bound(dist: StepDistribution, x: int, a: int, b: int) -> float:
    """(R~(x+b, a) - R~(x, a)) / ((1+a)(1+b)^2)."""
    if min(x, a, b) < 0:
        raise ValueError("x, a, b must be non-negative")
    if b == 0:
        return 0.0
    v, _ = lattice.tilde_R_exact(dist, x + b, [a])
    w, _ = lattice.tilde_R_exact(dist, x, [a])
    return float((v[0] - w[0]) / ((1 + a) * (1 + b) ** 2))


def tilde_increment_sweep(dist: StepDistribution, xs, as_, bs) -> np.ndarray:
    """Ratios on the product grid, shape (len(xs), len(as_), len(bs))."""
    xs, as_, bs = (np.asarray(v, dtype=int) for v in (xs, as_, bs))
    out = np.zeros((xs.size, as_.size, bs.size))
    # one DP over all start points; R~(., a) as a cumulative sum over sites
    g = lattice.green_minus(dist, tuple(int(a) for a in as_))
    for ia, a in enumerate(as_):
        row, _ = g.row(-int(a))
        sites = g.sites

        def tr(x):
            return float(row[(sites >= -x) & (sites <= 0)].sum())

        for ix, x in enumerate(xs):
            base = tr(x)
            for ib, b in enumerate(bs):
                out[ix, ia, ib] = 0.0 if b == 0 else (tr(x + b) - base) / ((1 + a) * (1 + b) ** 2)
    return out


@dataclass(frozen=True)
class KozlovTable:
    u_grid: np.ndarray
    n_grid: np.ndarray
    table: np.ndarray       # sqrt(n) P(min_{j<=n} S_j >= -u), shape (u, n)
    stderr: np.ndarray
    theta_hat: float
    relative_residual: np.ndarray

    def stability(self) -> np.ndarray:
        """Per u: max relative spread of the row across n."""
        t = self.table
        return (t.max(axis=1) - t.min(axis=1)) / t.mean(axis=1)


def kozlov_check(dist: StepDistribution, u_grid, n_grid, N: int, rng: np.random.Generator) -> KozlovTable:
    u = np.asarray(u_grid, dtype=float)
    n = np.asarray(n_grid, dtype=np.int64)
    tab = np.zeros((u.size, n.size))
    se = np.zeros_like(tab)
    for i, uu in enumerate(u):
        alive, _ = killed_walks(dist, N, 0.0, -uu, n, rng)
        p = alive.mean(axis=0)
        tab[i] = np.sqrt(n) * p
        se[i] = np.sqrt(n) * np.sqrt(p * (1 - p) / N)
    r = renewal_handle(dist, float(u.max()) + 1.0)(u)
    # least squares of table ~ theta R^-(u), weighted by 1/stderr^2
    w = 1.0 / np.maximum(se, 1e-12) ** 2
    theta = float((w * tab * r[:, None]).sum() / (w * (r[:, None] ** 2)).sum())
    resid = (tab - theta * r[:, None]) / (theta * r[:, None])
    return KozlovTable(u, n, tab, se, theta, resid)


@dataclass(frozen=True)
class BallotReport:
    n_grid: np.ndarray
    ratios: np.ndarray
    stderr: np.ndarray
    maximum: float
    mode: str


def ballot_bound_check(dist: StepDistribution, a: int, b: int, u: float, n_grid, N: int = 0,
                       rng: np.random.Generator | None = None, mode: str = "mc") -> BallotReport:
    """n^{3/2} P(min_{j<=n} S_j >= -a, b-a <= S_n <= b-a+u) / ((u+1)(a+1)(b+u+1)) over n_grid."""
    if u <= 0 or a < 0 or b < 0:
        raise ValueError("need u > 0 and a, b >= 0")
    n = np.asarray(n_grid, dtype=np.int64)
    norm = (u + 1) * (a + 1) * (b + u + 1)
    if mode == "exact":
        p = np.array([lattice.ballot_probability(dist, int(a), int(b), int(u), int(k)) for k in n])
        se = np.zeros_like(p)
    else:
        if rng is None:
            raise ValueError("mc mode needs an rng")
        alive, pos = killed_walks(dist, N, 0.0, -float(a), n, rng)
        hit = alive & (pos >= b - a) & (pos <= b - a + u)
        p = hit.mean(axis=0)
        se = np.sqrt(p * (1 - p) / N)
    ratios = n ** 1.5 * p / norm
    return BallotReport(n, ratios, n ** 1.5 * se / norm, float(ratios.max()), mode)


@dataclass(frozen=True)
class GreenSumResult:
    estimate: Estimate
    tail_increment: float   # value at L minus value at L/2
    z: float
    L: int


def green_sum(dist: StepDistribution, a_exp: float, z: float, N: int, L: int,
              rng: np.random.Generator | None = None, mode: str = "mc", chunk: int = 20_000) -> GreenSumResult:
    """E_z[sum_{l<=L} e^{-a S_l} 1{min_{j<=l} S_j >= 0}] with a truncation diagnostic."""
    if a_exp <= 0 or z < 0:
        raise ValueError("need a_exp > 0 and z >= 0")
    if mode == "exact":
        part = lattice.green_sum_exact(dist, a_exp, int(z), int(L))
        return GreenSumResult(exact_estimate(part[-1]), float(part[-1] - part[L // 2]), float(z), int(L))
    if rng is None:
        raise ValueError("mc mode needs an rng")
    totals = []
    halves = []
    left = N
    while left > 0:
        m = min(chunk, left)
        steps = dist.sample(rng, (m, L))
        path = z + np.concatenate([np.zeros((m, 1)), np.cumsum(steps, axis=1)], axis=1)
        ok = np.minimum.accumulate(path, axis=1) >= 0
        terms = np.where(ok, np.exp(-a_exp * np.where(ok, path, 0.0)), 0.0)
        totals.append(terms.sum(axis=1))
        halves.append(terms[:, : L // 2 + 1].sum(axis=1))
        left -= m
    tot = np.concatenate(totals)
    half = np.concatenate(halves)
    return GreenSumResult(estimate_from_samples(tot, "mc-green"), float(tot.mean() - half.mean()),
                          float(z), int(L))
