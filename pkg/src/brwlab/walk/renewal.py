"""Renewal functions R^-, R^+, the extended function R~(x, a), behind one interface.

Backends:
  "dp"       exact, finite-support integer walks only (see ``lattice``)
  "mc"       Monte Carlo over strict ladder records, any step law
  "nystrom"  deterministic solve of the harmonic equation, Gaussian steps only
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from ..models import StepDistribution
from . import lattice
from .ladder import ladder_counts

__all__ = [
    "RenewalTable",
    "TildeRQuery",
    "GaussianRenewal",
    "gaussian_renewal",
    "renewal_table",
    "renewal_minus",
    "renewal_plus",
    "renewal_handle",
    "tilde_R",
    "METHODS",
]

METHODS = ("dp", "mc", "nystrom")

# Overshoot constant of a standard Gaussian walk, -zeta(1/2)/sqrt(2 pi)
ZETA_HALF = -1.4603545088095868
RHO = -ZETA_HALF / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class RenewalTable:
    grid: np.ndarray
    r_minus: np.ndarray
    r_plus: np.ndarray
    error_minus: np.ndarray
    error_plus: np.ndarray
    method: str
    k_atoms: np.ndarray | None = None
    theta0: float | None = None
    n_samples: int = 0

    def is_monotone(self, k: float = 3.0) -> bool:
        """Nondecreasing up to ``k`` times the per-entry bound."""
        ok = True
        for r, e in ((self.r_minus, self.error_minus), (self.r_plus, self.error_plus)):
            ok &= bool(np.all(np.diff(r) >= -k * (e[1:] + e[:-1])))
        return ok

    def affine_band(self, lo: float = 0.0, hi: float = np.inf) -> tuple[float, float]:
        """(min, max) of R^-(u)/(1+u) over grid points in [lo, hi]."""
        keep = (self.grid >= lo) & (self.grid <= hi)
        ratio = self.r_minus[keep] / (1.0 + self.grid[keep])
        return float(ratio.min()), float(ratio.max())

    def rows(self):
        for i, u in enumerate(self.grid):
            yield {"u": float(u), "r_minus": float(self.r_minus[i]), "err_minus": float(self.error_minus[i]),
                   "r_plus": float(self.r_plus[i]), "err_plus": float(self.error_plus[i])}


@dataclass(frozen=True)
class TildeRQuery:
    x: float
    a: float
    value: float
    method: str
    error_bound: float


class GaussianRenewal:
    """R^- = R^+ for centered Gaussian steps by a Nystrom solve of

        R(u) = int_0^inf R(v) phi_sigma(v - u) dv,   u >= 0,

    on [0, U] with the linear tail R(v) = (v + rho sigma) / E[H] beyond U,
    E[H] = sigma / sqrt 2.  R(0) = 1 is *not* imposed; its computed value is a
    diagnostic of the truncation (``self.r0``).
    """

    def __init__(self, sigma: float, u_max: float = 200.0, panels: int | None = None, order: int = 10):
        self.sigma = float(sigma)
        self.slope = math.sqrt(2.0) / self.sigma
        self.offset = RHO * self.sigma
        self.U = float(u_max) + 15.0 * self.sigma
        panels = panels or int(math.ceil(self.U / self.sigma))
        xg, wg = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(0.0, self.U, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        self.nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
        self.weights = (half[:, None] * wg[None, :]).ravel()
        a = np.eye(self.nodes.size) - self._kernel(self.nodes) * self.weights[None, :]
        self.values = np.linalg.solve(a, self._tail(self.nodes))
        self.r0 = float(self(0.0))

    def _kernel(self, u):
        d = (self.nodes[None, :] - np.asarray(u, dtype=float)[:, None]) / self.sigma
        return np.exp(-0.5 * d * d) / (self.sigma * math.sqrt(2.0 * math.pi))

    def _tail(self, u):
        """int_U^inf slope (v + offset) phi_sigma(v - u) dv."""
        u = np.asarray(u, dtype=float)
        z = (self.U - u) / self.sigma
        return self.slope * ((u + self.offset) * special.ndtr(-z)
                             + self.sigma * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        flat = np.atleast_1d(u)
        out = np.zeros(flat.shape)
        inside = (flat >= 0) & (flat <= self.U)
        if np.any(inside):
            ui = flat[inside]
            wv = self.weights * self.values
            vals = np.empty(ui.size)
            for s in range(0, ui.size, 4096):   # bounded memory for long inputs
                blk = ui[s:s + 4096]
                vals[s:s + 4096] = self._kernel(blk) @ wv + self._tail(blk)
            out[inside] = vals
        high = flat > self.U
        out[high] = self.slope * (flat[high] + self.offset)
        return out.reshape(u.shape) if u.ndim else float(out[0])

    @property
    def error_bound(self) -> float:
        return abs(self.r0 - 1.0)


@lru_cache(maxsize=8)
def gaussian_renewal(sigma: float, u_max: float = 200.0) -> GaussianRenewal:
    return GaussianRenewal(sigma, u_max)


def _grid(u) -> np.ndarray:
    g = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(g < 0):
        raise ValueError("renewal functions are evaluated at u >= 0")
    return g


def renewal_table(dist: StepDistribution, grid, method: str = "dp", n: int = 100_000,
                  rng: np.random.Generator | None = None) -> RenewalTable:
    """R^- and R^+ on ``grid`` with per-entry bounds (stderr for "mc")."""
    g = _grid(grid)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if method == "dp":
        if not dist.is_lattice:
            raise ValueError("the exact DP backend is only available for lattice step laws")
        tab = lattice.lattice_renewal(dist, max(int(math.floor(g.max())), 1))
        idx = np.floor(g).astype(int)
        return RenewalTable(g, tab.r_minus[idx], tab.r_plus[idx], tab.r_minus_err[idx],
                            tab.r_plus_err[idx], "dp", tab.K(g), tab.theta0.value)
    if method == "nystrom":
        if dist.is_lattice:
            raise ValueError("the Nystrom backend solves the continuous Gaussian equation")
        gr = gaussian_renewal(dist.sigma, max(float(g.max()), 50.0))
        v = gr(g)
        e = np.full(g.shape, gr.error_bound)
        return RenewalTable(g, v, v.copy(), e, e.copy(), "nystrom")
    if rng is None:
        raise ValueError("the Monte Carlo backend needs an rng")
    cm, _, _ = ladder_counts(dist, g, n, rng, +1)
    cp, _, _ = ladder_counts(dist, g, n, rng, -1)
    se = lambda c: c.std(axis=0, ddof=1) / math.sqrt(c.shape[0])
    return RenewalTable(g, cm.mean(0), cp.mean(0), se(cm), se(cp), "mc", n_samples=int(n))


def renewal_minus(dist: StepDistribution, u, method: str = "dp", n: int = 100_000, rng=None):
    """(value, error_bound) arrays of R^-(u)."""
    t = renewal_table(dist, u, method, n, rng)
    return t.r_minus, t.error_minus


def renewal_plus(dist: StepDistribution, u, method: str = "dp", n: int = 100_000, rng=None):
    t = renewal_table(dist, u, method, n, rng)
    return t.r_plus, t.error_plus


def renewal_handle(dist: StepDistribution, u_max: float = 200.0):
    """A vectorized callable u -> R^-(u) (0 for u < 0), exact or deterministic."""
    if dist.is_lattice:
        tab = lattice.lattice_renewal(dist, int(math.ceil(u_max)))
        return tab.R_minus
    gr = gaussian_renewal(dist.sigma, float(u_max))

    def handle(u):
        u = np.asarray(u, dtype=float)
        return np.where(u >= 0, gr(np.maximum(u, 0.0)), 0.0)

    return handle


def tilde_R(dist: StepDistribution, x: float, a: float) -> TildeRQuery:
    """R~(x, a) = sum_j P_{-a}(max_{1<=i<=j} S_i < 0, S_j >= -x) by exact DP."""
    if x < 0 or a < 0:
        raise ValueError("x and a must be non-negative")
    if not dist.is_lattice:
        raise ValueError("R~ is evaluated exactly for lattice step laws only")
    v, e = lattice.tilde_R_exact(dist, x, [int(math.floor(a))])
    return TildeRQuery(float(x), float(a), float(v[0]), "dp", float(e[0]))
