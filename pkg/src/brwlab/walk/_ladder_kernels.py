"""Compiled random-walk loops with block jumps over long excursions.

A walk far from every level that matters is advanced many steps at once.
For a block of K steps started at clearance z above the relevant level, K is
chosen so that the block dips by z/2 with probability below ~3e-12 (Levy's
maximal inequality for Gaussian steps, Hoeffding's maximal inequality for
bounded lattice steps).  The block endpoint is then drawn from its exact law:
Gaussian, or multinomial counts over the lattice support.

Step laws are encoded as (gaussian flag, sd, support, probs).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# Gaussian: dip of z/2 over K steps has probability <= 2 Phi(-(z/2)/(sd sqrt K));
# K = (z / (14 sd))^2 makes that 2 Phi(-7) ~ 2.6e-12.
GAUSS_FACTOR = 14.0
# Lattice: P(min partial sum <= -t) <= exp(-2 t^2 / (K r^2)), r = support range;
# t = z/2 and exp(-26.6) ~ 2.8e-12.
HOEFFDING_LOG = 26.6


@njit(cache=True)
def _step(rng, gaussian, sd, support, cprobs):
    if gaussian:
        return rng.normal(0.0, sd)
    u = rng.random()
    for i in range(cprobs.shape[0]):
        if u < cprobs[i]:
            return float(support[i])
    return float(support[support.shape[0] - 1])


@njit(cache=True)
def _block_len(z, gaussian, sd, span):
    """Largest safe block length at clearance z (0 or 1 means: step normally)."""
    if gaussian:
        r = z / (GAUSS_FACTOR * sd)
        return int(r * r)
    return int(z * z / (2.0 * span * span * HOEFFDING_LOG))


@njit(cache=True)
def _block(rng, kk, gaussian, sd, support, probs):
    if gaussian:
        return sd * math.sqrt(kk) * rng.standard_normal()
    total = 0.0
    left = kk
    mass = 1.0
    for i in range(probs.shape[0] - 1):
        if left == 0:
            break
        q = probs[i] / mass if mass > 0 else 1.0
        if q >= 1.0:
            c = left
        else:
            c = rng.binomial(left, q)
        total += c * support[i]
        left -= c
        mass -= probs[i]
    total += left * support[support.shape[0] - 1]
    return total


@njit(cache=True)
def ladder_counts(rng, n, gaussian, sd, support, probs, u_grid, depth_max,
                  tail_kind, tail_table, tail_lo):
    """Strict descending ladder records of n walks from 0, down to depth ``depth_max``.

    For each walk and each u in ``u_grid`` returns
      count[i, g] = #{records j >= 0 : depth_j <= u}   (record 0 is the start)
      harm[i, g]  = sum_j G(depth_j - u)
    where G(t) = P(X >= t): Gaussian tail when tail_kind == 0, otherwise
    tail_table[t - tail_lo] for integer t (0 above the table, 1 below it).
    E count = R^-(u) and E harm = E[R^-(u + X); u + X >= 0].
    """
    ng = u_grid.shape[0]
    count = np.zeros((n, ng))
    harm = np.zeros((n, ng))
    cprobs = np.cumsum(probs)
    span = float(support.max() - support.min()) if not gaussian else 0.0
    jumps = 0
    rs2 = 1.0 / (sd * math.sqrt(2.0)) if gaussian else 0.0
    for i in range(n):
        s = 0.0
        m = 0.0
        d = 0.0
        while True:
            # record at depth d
            for g in range(ng):
                u = u_grid[g]
                if d <= u:
                    count[i, g] += 1.0
                t = d - u
                if tail_kind == 0:
                    harm[i, g] += 0.5 * math.erfc(t * rs2)
                else:
                    k = int(math.floor(t + 0.5)) - tail_lo
                    if k < 0:
                        harm[i, g] += 1.0
                    elif k < tail_table.shape[0]:
                        harm[i, g] += tail_table[k]
            if d > depth_max:
                break
            while True:
                z = s - m
                kk = _block_len(z, gaussian, sd, span)
                if kk >= 2:
                    s += _block(rng, kk, gaussian, sd, support, probs)
                    jumps += 1
                    continue
                s += _step(rng, gaussian, sd, support, cprobs)
                if s < m:
                    m = s
                    d = -s
                    break
    return count, harm, jumps


@njit(cache=True)
def killed_walks(rng, n, gaussian, sd, support, probs, start, floor, n_steps, checkpoints):
    """Walks of n_steps from ``start``, killed on first entry below ``floor``.

    Returns alive[i, c] (still alive at step checkpoints[c]) and the position
    at each checkpoint (nan once dead).  Checkpoints must be increasing.
    """
    nc = checkpoints.shape[0]
    alive = np.zeros((n, nc), dtype=np.bool_)
    pos = np.full((n, nc), np.nan)
    cprobs = np.cumsum(probs)
    span = float(support.max() - support.min()) if not gaussian else 0.0
    for i in range(n):
        s = start
        t = 0
        c = 0
        dead = s < floor
        while c < nc and not dead:
            target = checkpoints[c]
            while t < target:
                kk = _block_len(s - floor, gaussian, sd, span)
                if kk > target - t:
                    kk = target - t
                if kk >= 2:
                    s += _block(rng, kk, gaussian, sd, support, probs)
                    t += kk
                else:
                    s += _step(rng, gaussian, sd, support, cprobs)
                    t += 1
                if s < floor:
                    dead = True
                    break
            if dead:
                break
            alive[i, c] = True
            pos[i, c] = s
            c += 1
    return alive, pos
