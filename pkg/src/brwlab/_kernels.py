"""Compiled inner loops for subtree exploration and the spine importance sampler.

All kernels take a numpy Generator and draw from it sequentially, so a fixed
stream gives a fixed result.  Positions are in nats; offspring law is the
GaussianDyadic one (branch with probability p into two N(mu, sd^2) children).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

EXIT_NONE = 0
EXIT_FLOOR = 1
EXIT_CAP = 2

INF = np.inf


@njit(cache=True)
def band_dfs(rng, p, mu, sd, root_pos, root_gen, floor, freeze, ref, gen_cap,
             stack_pos, stack_gen):
    """Depth-first walk over the strict descendants of one particle.

    A child strictly below ``floor`` stops the walk (status EXIT_FLOOR).  A
    child strictly above ``freeze`` is frozen: it is not expanded, and it
    contributes exp(ref - y) to the killed-mass sum and (y - ref) exp(ref - y)
    to the stopping-line derivative sum.  Particles at generation ``gen_cap``
    are not expanded.

    Returns (min over descendants, status, node count, killed sum, line sum).
    """
    cap = stack_pos.shape[0]
    stack_pos[0] = root_pos
    stack_gen[0] = root_gen
    top = 1
    mn = INF
    nodes = 0
    killed = 0.0
    line = 0.0
    while top > 0:
        top -= 1
        v = stack_pos[top]
        g = stack_gen[top]
        if g >= gen_cap:
            continue
        if rng.random() >= p:
            continue
        for _ in range(2):
            y = v + rng.normal(mu, sd)
            nodes += 1
            if y < mn:
                mn = y
            if y < floor:
                return mn, EXIT_FLOOR, nodes, killed, line
            if y > freeze:
                e = math.exp(ref - y)
                killed += e
                line += (y - ref) * e
                continue
            if top >= cap:
                return mn, EXIT_CAP, nodes, killed, line
            stack_pos[top] = y
            stack_gen[top] = g + 1
            top += 1
    return mn, EXIT_NONE, nodes, killed, line


@njit(cache=True)
def direct_min_batch(rng, n, p, mu, sd, floor, freeze, gen_cap, stack_size):
    """Global minimum of ``n`` trees killed above ``freeze`` (root included).

    Trees whose exploration crosses ``floor`` are stopped early and flagged.
    """
    out_min = np.empty(n)
    out_status = np.empty(n, dtype=np.int8)
    out_nodes = np.empty(n, dtype=np.int64)
    out_killed = np.empty(n)
    sp = np.empty(stack_size)
    sg = np.empty(stack_size, dtype=np.int64)
    for i in range(n):
        mn, st, nodes, killed, _ = band_dfs(rng, p, mu, sd, 0.0, 0, floor, freeze, 0.0,
                                            gen_cap, sp, sg)
        out_min[i] = min(mn, 0.0)
        out_status[i] = st
        out_nodes[i] = nodes
        out_killed[i] = killed
    return out_min, out_status, out_nodes, out_killed


@njit(cache=True)
def line_sum_batch(rng, n, p, mu, sd, height, gen_cap, stack_size):
    """Stopping-line derivative sums of ``n`` trees frozen above ``height``.

    Returns (sum over the line of V e^{-V}, sum of e^{-V}, tree min, status).
    """
    out_d = np.empty(n)
    out_w = np.empty(n)
    out_min = np.empty(n)
    out_status = np.empty(n, dtype=np.int8)
    sp = np.empty(stack_size)
    sg = np.empty(stack_size, dtype=np.int64)
    for i in range(n):
        mn, st, _, w, d = band_dfs(rng, p, mu, sd, 0.0, 0, -INF, height, 0.0, gen_cap, sp, sg)
        out_d[i] = d
        out_w[i] = w
        out_min[i] = min(mn, 0.0)
        out_status[i] = st
    return out_d, out_w, out_min, out_status


@njit(cache=True)
def _grow_f(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _grow_i(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def spine_min_batch(rng, n, p, mu, sd, x, depth, slack, absolute, barrier, margin,
                    gen_cap, stack_size, record_terms, record_window):
    """Shared-spine importance sampler for {M in [-x-depth, -x)}.

    One sample is a spine walk (steps N(0, sd^2)) with one sibling per
    generation (displacement N(mu, sd^2) from the spine parent).  Every
    generation k at which the spine sets a new strict minimum S_k inside
    [-x-depth, -x) is a candidate; it scores exp(S_k + x) when all sibling
    subtrees born up to k and a fresh subtree of the candidate stay at or
    above S_k.

    Killing:
      absolute=True  every particle, spine included, is killed above
                     ``barrier``; the estimator is then exact for that model.
      absolute=False subtree particles more than ``slack`` above the candidate
                     are frozen; the spine is never killed and high spine
                     excursions are advanced in Gaussian blocks.

    Because the subtree barrier moves with the candidate, a single spine
    serves every level in the window: column j of the score matrix holds the
    scores of candidates with S_k in [-x-j-1, -x-j).

    Returns per-sample scores by unit interval, per-sample killed-mass bounds,
    a flat record of passing candidates (with each candidate's frozen mass
    sum exp(S_k - y); sibling line terms only when ``record_terms``) and run
    counters.
    """
    contrib = np.zeros((n, depth))
    kbound = np.zeros(n)
    # passing-candidate records
    c_sample = np.empty(64, dtype=np.int64)
    c_u = np.empty(64)
    c_gen = np.empty(64, dtype=np.int64)
    c_own = np.empty(64)
    c_rest = np.empty(64)
    c_start = np.empty(64, dtype=np.int64)
    c_count = np.empty(64, dtype=np.int64)
    c_kb = np.empty(64)
    n_cand = 0
    t_off = np.empty(256, dtype=np.int64)
    t_val = np.empty(256)
    n_terms = 0

    sp = np.empty(stack_size)
    sg = np.empty(stack_size, dtype=np.int64)
    sib_pos = np.empty(256)
    sib_gen = np.empty(256, dtype=np.int64)
    ring_cap = record_window + 1 if record_terms else 0
    ring_pos = np.empty(max(ring_cap, 1))
    ring_gen = np.empty(max(ring_cap, 1), dtype=np.int64)

    truncated = 0
    capped = 0
    nodes_total = 0
    candidates_seen = 0
    jumps = 0
    # a block of kk steps keeps the walk above its start minus half the
    # clearance z except with probability 2*Phi(-7) (Levy's inequality)
    rel_sd = 14.0 * sd
    skip_scale = 1.0 / (2.0 * p)

    for i in range(n):
        s = 0.0
        k = 0
        m = 0.0
        n_sib = 0
        born_killed = 0.0  # sum of e^{-y} over siblings dropped at birth
        born_line = 0.0    # sum of y e^{-y} over the same siblings
        skipped = 0.0      # bound on the e^{-y} sum for block-jumped generations
        ring_len = 0
        ring_head = 0
        while True:
            if absolute:
                level = barrier
            else:
                level = min(m, -x) + slack
                z = s - level - margin
                if z > rel_sd * 1.4142135623730951:
                    kk = int((z / rel_sd) ** 2)
                    if k + kk > gen_cap:
                        truncated += 1
                        break
                    s += sd * math.sqrt(kk) * rng.standard_normal()
                    k += kk
                    skipped += kk * math.exp(-(level + margin + 0.5 * z)) * skip_scale
                    jumps += 1
                    continue
            k += 1
            if k > gen_cap:
                truncated += 1
                break
            y = s + rng.normal(mu, sd)
            s = s + rng.normal(0.0, sd)
            if y <= level:
                sib_pos = _grow_f(sib_pos, n_sib + 1)
                sib_gen = _grow_i(sib_gen, n_sib + 1)
                sib_pos[n_sib] = y
                sib_gen[n_sib] = k
                n_sib += 1
            else:
                e = math.exp(-y)
                if ring_cap > 0:
                    # recent dropped siblings stay individually visible to the
                    # truncated decomposition; the ring spills its oldest entry
                    if ring_len == ring_cap:
                        yo = ring_pos[ring_head]
                        eo = math.exp(-yo)
                        born_killed += eo
                        born_line += yo * eo
                        ring_head = (ring_head + 1) % ring_cap
                        ring_len -= 1
                    slot = (ring_head + ring_len) % ring_cap
                    ring_pos[slot] = y
                    ring_gen[slot] = k
                    ring_len += 1
                else:
                    born_killed += e
                    born_line += y * e
            if absolute and s > barrier:
                break
            if s < m:
                m = s
                if s < -x - depth:
                    break
                if s >= -x:
                    continue
                # candidate at generation k
                candidates_seen += 1
                freeze = barrier if absolute else s + slack
                ok = True
                # spill ring entries that fell out of the window
                while ring_len > 0 and k - ring_gen[ring_head] > record_window:
                    yo = ring_pos[ring_head]
                    eo = math.exp(-yo)
                    born_killed += eo
                    born_line += yo * eo
                    ring_head = (ring_head + 1) % ring_cap
                    ring_len -= 1
                es = math.exp(s)
                kb = es * (born_killed + skipped)
                rest = es * (born_line - s * born_killed)
                first_term = n_terms
                for r in range(ring_len):
                    slot = (ring_head + r) % ring_cap
                    yr = ring_pos[slot]
                    e = math.exp(s - yr)
                    kb += e
                    t_off = _grow_i(t_off, n_terms + 1)
                    t_val = _grow_f(t_val, n_terms + 1)
                    t_off[n_terms] = k - ring_gen[slot]
                    t_val[n_terms] = (yr - s) * e
                    n_terms += 1
                for j in range(n_sib - 1, -1, -1):
                    if sib_pos[j] < s:
                        ok = False
                        break
                for j in range(n_sib - 1, -1, -1):
                    if not ok:
                        break
                    yj = sib_pos[j]
                    if yj > freeze:
                        e = math.exp(s - yj)
                        kb += e
                        val = (yj - s) * e
                    else:
                        mn, st, nodes, killed, line = band_dfs(
                            rng, p, mu, sd, yj, sib_gen[j], s, freeze, s, 1 << 62, sp, sg)
                        nodes_total += nodes
                        if st == EXIT_CAP:
                            capped += 1
                        if st != EXIT_NONE:
                            ok = False
                            break
                        kb += killed
                        val = line
                    off = k - sib_gen[j]
                    if record_terms and off <= record_window:
                        t_off = _grow_i(t_off, n_terms + 1)
                        t_val = _grow_f(t_val, n_terms + 1)
                        t_off[n_terms] = off
                        t_val[n_terms] = val
                        n_terms += 1
                    else:
                        rest += val
                if not ok:
                    n_terms = first_term
                    continue
                mn, st, nodes, killed, own = band_dfs(
                    rng, p, mu, sd, s, k, s, freeze, s, 1 << 62, sp, sg)
                nodes_total += nodes
                if st == EXIT_CAP:
                    capped += 1
                if st != EXIT_NONE:
                    n_terms = first_term
                    continue
                kb += killed
                u = -(s + x)
                w = math.exp(-u)
                contrib[i, min(int(u), depth - 1)] += w
                kbound[i] += w * kb
                c_sample = _grow_i(c_sample, n_cand + 1)
                c_u = _grow_f(c_u, n_cand + 1)
                c_gen = _grow_i(c_gen, n_cand + 1)
                c_own = _grow_f(c_own, n_cand + 1)
                c_rest = _grow_f(c_rest, n_cand + 1)
                c_start = _grow_i(c_start, n_cand + 1)
                c_count = _grow_i(c_count, n_cand + 1)
                c_kb = _grow_f(c_kb, n_cand + 1)
                c_sample[n_cand] = i
                c_u[n_cand] = u
                c_gen[n_cand] = k
                c_own[n_cand] = own
                c_rest[n_cand] = rest
                c_start[n_cand] = first_term
                c_count[n_cand] = n_terms - first_term
                c_kb[n_cand] = kb
                n_cand += 1
    counters = np.array([truncated, capped, nodes_total, candidates_seen, jumps], dtype=np.int64)
    return (contrib, kbound, c_sample[:n_cand], c_u[:n_cand], c_gen[:n_cand], c_own[:n_cand],
            c_rest[:n_cand], c_start[:n_cand], c_count[:n_cand], c_kb[:n_cand], t_off[:n_terms],
            t_val[:n_terms], counters)


@njit(cache=True)
def root_candidate_batch(rng, n, p, mu, sd, slack, stack_size):
    """The generation-0 candidate: trees whose root is the global minimum.

    Explores each tree with floor 0 and freeze ``slack``.  Returns (pass flag,
    frozen mass sum e^{-y}, line sum y e^{-y}, node count).
    """
    ok = np.zeros(n, dtype=np.bool_)
    kb = np.zeros(n)
    line = np.zeros(n)
    nodes = np.zeros(n, dtype=np.int64)
    sp = np.empty(stack_size)
    sg = np.empty(stack_size, dtype=np.int64)
    for i in range(n):
        mn, st, nd, killed, ln = band_dfs(rng, p, mu, sd, 0.0, 0, 0.0, slack, 0.0, 1 << 62, sp, sg)
        nodes[i] = nd
        if st == EXIT_NONE:
            ok[i] = True
            kb[i] = killed
            line[i] = ln
    return ok, kb, line, nodes
