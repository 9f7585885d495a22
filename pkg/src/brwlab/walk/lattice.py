"""Exact evaluation of renewal quantities for finite-support integer walks.

Every quantity here is an infinite sum over time of constrained-path
probabilities.  The sums are computed by a time-stepped DP over positions, read
off at path lengths L0 * 2^i, and extrapolated in powers of L^{-1/2} (the
constrained-path probabilities decay like n^{-3/2}, so the tails of the sums
expand in half-integer powers).  The error bound of an extrapolated value is
the gap between the two best successive extrapolation orders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..models import StepDistribution

__all__ = [
    "DPResult",
    "richardson",
    "occupation",
    "GreenTable",
    "green_minus",
    "green_plus",
    "theta0",
    "LatticeRenewal",
    "lattice_renewal",
    "ladder_law",
    "renewal_from_ladder",
    "renewal_time_dp",
    "tilde_R_exact",
    "constrained_survival",
    "ballot_probability",
    "green_sum_exact",
]

DEFAULT_L0 = 256
DEFAULT_LEVELS = 8


@dataclass(frozen=True)
class DPResult:
    value: float
    error_bound: float
    flagged: bool = False


def richardson(values: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Extrapolate partial sums S(L) -> S(inf) assuming S(L) = S + sum_r c_r L^{-r/2}.

    ``values`` has shape (levels, ...).  Returns (estimate, error bound), both
    with the trailing shape.  Each order q fits the last q + 1 levels exactly;
    the reported estimate is the order whose change from the previous order is
    smallest, and that change is the error bound.
    """
    v = np.asarray(values, dtype=float)
    h = np.asarray(lengths, dtype=float) ** -0.5
    m = v.shape[0]
    flat = v.reshape(m, -1)
    prev = flat[-1]
    best = flat[-1].copy()
    best_err = np.full(flat.shape[1], np.inf)
    for q in range(1, m):
        hs = h[m - q - 1:]
        a = np.vander(hs, q + 1, increasing=True)
        coef = np.linalg.solve(a, flat[m - q - 1:])
        est = coef[0]
        err = np.abs(est - prev)
        better = err < best_err
        best = np.where(better, est, best)
        best_err = np.where(better, err, best_err)
        prev = est
    shape = v.shape[1:]
    return best.reshape(shape), best_err.reshape(shape)


def _check_lattice(dist: StepDistribution) -> None:
    if not dist.is_lattice:
        raise ValueError("the exact DP backend needs a finite-support integer step law")


def occupation(dist: StepDistribution, starts, kill: str, n_levels: int = DEFAULT_LEVELS,
               l0: int = DEFAULT_L0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expected occupation of each site by a killed walk, summed over time.

    ``kill`` selects the region that absorbs the walk at times j >= 1:
      "nonneg"  positions >= 0   (paths with max_{1<=i<=j} S_i < 0)
      "pos"     positions > 0    (paths with max_{0<=i<=j} S_i <= 0)
      "nonpos"  positions <= 0   (paths with min_{1<=i<=j} S_i > 0)
    ``starts`` are integer start positions, one DP row each.

    Returns (sites, lengths, partial) where partial[i, r, s] is the occupation of
    sites[s] from starts[r] summed over times 0..lengths[i].
    """
    _check_lattice(dist)
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    sup = np.asarray(dist.support, dtype=np.int64)
    pr = np.asarray(dist.probs, dtype=float)
    lengths = l0 * 2 ** np.arange(n_levels)
    lmax = int(lengths[-1])
    reach = int(math.ceil(9.0 * dist.sigma * math.sqrt(lmax))) + int(np.abs(sup).max())
    if kill in ("nonneg", "pos"):
        lo = min(int(starts.min()), 0) - reach
        hi = max(int(starts.max()), 0) + int(sup.max()) + 1
    elif kill == "nonpos":
        lo = min(int(starts.min()), 0) - int(np.abs(sup.min())) - 1
        hi = max(int(starts.max()), 0) + reach
    else:
        raise ValueError(f"unknown kill region {kill!r}")
    sites = np.arange(lo, hi + 1)
    width = sites.size
    if kill == "nonneg":
        alive = sites < 0
    elif kill == "pos":
        alive = sites <= 0
    else:
        alive = sites > 0
    state = np.zeros((starts.size, width))
    state[np.arange(starts.size), starts - lo] = 1.0
    acc = state.copy()
    partial = np.empty((n_levels, starts.size, width))
    level = 0
    for j in range(1, lmax + 1):
        new = np.zeros_like(state)
        for s, q in zip(sup, pr):
            if s >= 0:
                new[:, s:] += q * state[:, : width - s]
            else:
                new[:, : width + s] += q * state[:, -s:]
        new[:, ~alive] = 0.0
        # mass pushed past the array edge is lost; the edge sits 9 sigma sqrt(L) away
        state = new
        acc += state
        if j == lengths[level]:
            partial[level] = acc
            level += 1
    return sites, lengths, partial


@dataclass(frozen=True)
class GreenTable:
    """Extrapolated time-summed occupations: value[r, s] from starts[r] at sites[s]."""

    sites: np.ndarray
    starts: np.ndarray
    value: np.ndarray
    error: np.ndarray

    def row(self, start: int) -> tuple[np.ndarray, np.ndarray]:
        r = int(np.flatnonzero(self.starts == start)[0])
        return self.value[r], self.error[r]


def _green(dist, starts, kill, n_levels, l0) -> GreenTable:
    sites, lengths, partial = occupation(dist, starts, kill, n_levels, l0)
    est, err = richardson(partial, lengths)
    return GreenTable(sites, np.atleast_1d(np.asarray(starts)), est, err)


@lru_cache(maxsize=64)
def _green_cached(dist, starts, kill, n_levels, l0):
    return _green(dist, np.asarray(starts), kill, n_levels, l0)


def green_minus(dist: StepDistribution, starts=(0,), n_levels: int = DEFAULT_LEVELS,
                l0: int = DEFAULT_L0) -> GreenTable:
    """Occupation of a walk started at ``-a`` (for a in ``starts``) killed on [0, inf) at times >= 1."""
    return _green_cached(dist, tuple(-int(a) for a in starts), "nonneg", n_levels, l0)


def green_plus(dist: StepDistribution, n_levels: int = DEFAULT_LEVELS, l0: int = DEFAULT_L0) -> GreenTable:
    """Occupation of a walk from 0 killed on (-inf, 0] at times >= 1."""
    return _green_cached(dist, (0,), "nonpos", n_levels, l0)


def theta0(dist: StepDistribution, n_levels: int = DEFAULT_LEVELS, l0: int = DEFAULT_L0) -> DPResult:
    """theta_0 = sum_j P(max_{0<=l<=j} S_l <= 0, S_j = 0)."""
    g = _green_cached(dist, (0,), "pos", n_levels, l0)
    i = int(np.flatnonzero(g.sites == 0)[0])
    return DPResult(float(g.value[0, i]), float(g.error[0, i]))


@dataclass(frozen=True)
class LatticeRenewal:
    """R^-, R^+, K and theta_0 of an integer walk, evaluated on integer arguments."""

    dist: StepDistribution
    r_minus: np.ndarray
    r_minus_err: np.ndarray
    r_plus: np.ndarray
    r_plus_err: np.ndarray
    theta0: DPResult

    @property
    def u_max(self) -> int:
        return self.r_minus.size - 1

    def _eval(self, table, err, u):
        u = np.asarray(u, dtype=float)
        k = np.floor(u).astype(np.int64)
        if np.any(k > self.u_max):
            raise ValueError(f"argument beyond tabulated range {self.u_max}")
        out = np.where(k >= 0, table[np.clip(k, 0, None)], 0.0)
        e = np.where(k >= 0, err[np.clip(k, 0, None)], 0.0)
        return out, e

    def R_minus(self, u):
        return self._eval(self.r_minus, self.r_minus_err, u)[0]

    def R_plus(self, u):
        return self._eval(self.r_plus, self.r_plus_err, u)[0]

    def K(self, u):
        """Renewal mass of the strict ascending ladder heights at u (0 off the lattice)."""
        u = np.asarray(u, dtype=float)
        k = np.floor(u).astype(np.int64)
        on = (u == k) & (k >= 0)
        cur = self.R_plus(np.where(on, k, 0))
        below = np.where(k >= 1, self.R_plus(np.where(on & (k >= 1), k - 1, 0)), 0.0)
        return np.where(on, cur - below, 0.0)

    def K_err(self, u) -> float:
        k = int(math.floor(u))
        if k < 0 or u != k:
            return 0.0
        e = self.r_plus_err[k]
        return float(e + (self.r_plus_err[k - 1] if k >= 1 else 0.0))


def _harmonic_profile(dist: StepDistribution, sign: int, span: int) -> np.ndarray:
    """Least-squares solution of R(u) = E[R(u + sign*X); u + sign*X >= 0] on [0, span].

    Above ``span`` the solution is continued linearly; the neglected modes
    decay geometrically, so a few hundred sites are plenty.
    """
    sup = sign * np.asarray(dist.support, dtype=np.int64)
    pr = np.asarray(dist.probs, dtype=float)
    top = max(int(sup.max()), 1)
    n = span + 1 + top
    a = np.zeros((n + 1, n))
    for u in range(span + 1):
        a[u, u] += 1.0
        for s, q in zip(sup, pr):
            if u + s >= 0:
                a[u, u + s] -= q
    for i in range(1, top + 1):
        a[span + i, span + i] = 1.0
        a[span + i, span] -= 1.0 + i
        a[span + i, span - 1] += i
    a[n, 0] = 1.0
    b = np.zeros(n + 1)
    b[n] = 1.0
    return np.linalg.lstsq(a, b, rcond=None)[0]


def ladder_law(dist: StepDistribution, sign: int = 1, span: int = 300) -> tuple[np.ndarray, float]:
    """Law of the first strict ladder height, h[k-1] = P(|H_1| = k).

    sign=+1 gives the descending ladder, sign=-1 the ascending one.  The law is
    read off the renewal equation R(u) = 1 + sum_k h_k R(u - k) from a
    harmonic solve, then renormalized (the walk is recurrent, so the ladder
    height is finite).  Returns (h, discrepancy between two solve spans).
    """
    _check_lattice(dist)
    depth = int(max(-sign * s for s in dist.support))
    if depth < 1:
        raise ValueError("walk never moves in the ladder direction")

    def from_profile(r):
        h = np.zeros(depth)
        for u in range(1, depth + 1):
            h[u - 1] = r[u] - 1.0 - sum(h[k - 1] * r[u - k] for k in range(1, u))
        h = np.clip(h, 0.0, None)
        return h / h.sum()

    h1 = from_profile(_harmonic_profile(dist, sign, span))
    h2 = from_profile(_harmonic_profile(dist, sign, 2 * span))
    return h2, float(np.abs(h1 - h2).max())


def renewal_from_ladder(h: np.ndarray, u_max: int) -> np.ndarray:
    """R(u) = sum_j P(|H_1| + ... + |H_j| <= u) on integer u, by the renewal recurrence."""
    r = np.zeros(u_max + 1)
    for u in range(u_max + 1):
        acc = 1.0
        for k in range(1, min(u, h.size) + 1):
            acc += h[k - 1] * r[u - k]
        r[u] = acc
    return r


@lru_cache(maxsize=16)
def lattice_renewal(dist: StepDistribution, u_max: int = 200, n_levels: int = DEFAULT_LEVELS,
                    l0: int = DEFAULT_L0) -> LatticeRenewal:
    """Tabulate R^-(u), R^+(u) for integer u in [0, u_max], with theta_0 by time DP.

    The renewal functions come from the exact ladder-height law; the reported
    per-entry bound propagates the ladder-law discrepancy linearly in u (the
    renewal recurrence is a convex combination, so errors grow at most
    proportionally to the number of ladder steps below u).
    """
    _check_lattice(dist)
    hm, em = ladder_law(dist, +1)
    hp, ep = ladder_law(dist, -1)
    rm = renewal_from_ladder(hm, u_max)
    rp = renewal_from_ladder(hp, u_max)
    grid = np.arange(u_max + 1)
    rm_e = em * (1.0 + grid) * rm + 1e-13 * rm
    rp_e = ep * (1.0 + grid) * rp + 1e-13 * rp
    return LatticeRenewal(dist, rm, rm_e, rp, rp_e, theta0(dist, n_levels, l0))


def renewal_time_dp(dist: StepDistribution, u_max: int, n_levels: int = DEFAULT_LEVELS,
                    l0: int = DEFAULT_L0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """R^-, R^+ on [0, u_max] from extrapolated time-summed occupations.

    An independent (slower, less accurate) route used to cross-check
    :func:`lattice_renewal`.  Returns (r_minus, err, r_plus, err).
    """
    gm = green_minus(dist, (0,), n_levels, l0)
    gp = green_plus(dist, n_levels, l0)
    out = []
    for g, sgn in ((gm, -1), (gp, 1)):
        s = sgn * g.sites
        keep = (s >= 0) & (s <= u_max)
        occ = np.zeros(u_max + 1)
        occ_e = np.zeros(u_max + 1)
        occ[s[keep]] = g.value[0, keep]
        occ_e[s[keep]] = g.error[0, keep]
        out += [np.cumsum(occ), np.cumsum(occ_e)]
    return tuple(out)


def tilde_R_exact(dist: StepDistribution, x: float, a_values, n_levels: int = DEFAULT_LEVELS,
                  l0: int = DEFAULT_L0) -> tuple[np.ndarray, np.ndarray]:
    """R~(x, a) = sum_j P_{-a}(max_{1<=i<=j} S_i < 0, S_j >= -x) for integer a."""
    a_values = tuple(int(a) for a in np.atleast_1d(a_values))
    g = green_minus(dist, a_values, n_levels, l0)
    mask = (g.sites >= -x) & (g.sites <= 0)
    return g.value[:, mask].sum(axis=1), g.error[:, mask].sum(axis=1)


def constrained_survival(dist: StepDistribution, u: int, n_max: int) -> np.ndarray:
    """P(min_{0<=j<=n} S_j >= -u) for n = 0..n_max, exactly."""
    _check_lattice(dist)
    sup = np.asarray(dist.support, dtype=np.int64)
    pr = np.asarray(dist.probs, dtype=float)
    hi = int(sup.max()) * n_max + 1
    lo = -u
    width = hi - lo + 1
    state = np.zeros(width)
    state[-lo] = 1.0
    out = np.empty(n_max + 1)
    out[0] = 1.0
    for n in range(1, n_max + 1):
        new = np.zeros(width)
        for s, q in zip(sup, pr):
            if s >= 0:
                new[s:] += q * state[: width - s]
            else:
                new[: width + s] += q * state[-s:]
        state = new
        out[n] = state.sum()
    return out


def ballot_probability(dist: StepDistribution, a: int, b: int, u: int, n: int) -> float:
    """P(min_{j<=n} S_j >= -a, b - a <= S_n <= b - a + u), exactly."""
    _check_lattice(dist)
    sup = np.asarray(dist.support, dtype=np.int64)
    pr = np.asarray(dist.probs, dtype=float)
    lo = -a
    hi = int(sup.max()) * n + 1
    width = hi - lo + 1
    state = np.zeros(width)
    state[-lo] = 1.0
    for _ in range(n):
        new = np.zeros(width)
        for s, q in zip(sup, pr):
            if s >= 0:
                new[s:] += q * state[: width - s]
            else:
                new[: width + s] += q * state[-s:]
        state = new
    sites = np.arange(lo, hi + 1)
    keep = (sites >= b - a) & (sites <= b - a + u)
    return float(state[keep].sum())


def green_sum_exact(dist: StepDistribution, a_exp: float, z: int, L: int) -> np.ndarray:
    """Partial sums over l <= 0..L of E_z[e^{-a S_l} 1{min_{j<=l} S_j >= 0}]."""
    _check_lattice(dist)
    if z < 0:
        raise ValueError("start must be non-negative")
    sup = np.asarray(dist.support, dtype=np.int64)
    pr = np.asarray(dist.probs, dtype=float)
    hi = z + int(sup.max()) * L + 1
    width = hi + 1
    sites = np.arange(width)
    weight = np.exp(-a_exp * sites)
    state = np.zeros(width)
    state[z] = 1.0
    out = np.empty(L + 1)
    total = float(np.dot(state, weight))
    out[0] = total
    for l in range(1, L + 1):
        new = np.zeros(width)
        for s, q in zip(sup, pr):
            if s >= 0:
                new[s:] += q * state[: width - s]
            else:
                new[: width + s] += q * state[-s:]
        state = new
        total += float(np.dot(state, weight))
        out[l] = total
    return out
