import math

import numpy as np
import pytest
from scipy import special

from brwlab.harness.rng import RngStream
from brwlab.models import StepDistribution, make_spec, skewed_lattice, spine_step_law, srw
from brwlab import walk
from brwlab.walk import lattice
from brwlab.walk.ladder import killed_walks

from conftest import mean_se, within

GAUSS = spine_step_law(make_spec(p=1.0))


def rng(seed=0):
    return RngStream(seed).generator()


def srw_stay_nonneg(n):
    """P(S_1, ..., S_n >= 0) for SRW = C(n, floor(n/2)) / 2^n (reflection principle)."""
    return math.exp(special.gammaln(n + 1) - special.gammaln(n // 2 + 1) - special.gammaln(n - n // 2 + 1)
                    - n * math.log(2))


# ---------------------------------------------------------------------------
# ladders

def test_srw_descending_ladder_heights_are_unit():
    s = walk.ladder_sample(srw(), 5000, rng(1))
    assert np.all(np.diff(s.descending_heights) == -1)
    assert np.all(np.diff(s.ascending_heights) == 1)
    assert np.all(np.diff(s.descending_epochs) > 0) and s.descending_epochs[0] == 0


def test_gaussian_first_ladder_height_mean():
    # for a symmetric continuous walk E|H_1| = sigma / sqrt 2
    vals = {}
    for L in (500, 2000):
        r = rng(L)
        h = []
        for _ in range(3000):
            s = walk.ladder_sample(GAUSS, L, r)
            if s.descending_heights.size > 1:
                h.append(-s.descending_heights[1])
        vals[L] = mean_se(h)
    target = GAUSS.sigma / math.sqrt(2)
    for m, se in vals.values():
        assert abs(m - target) <= 3 * se + 0.02 * target
    assert abs(vals[500][0] - vals[2000][0]) <= 0.05 * target


def test_srw_first_descending_epoch_grows_like_sqrt():
    r = rng(2)
    for L in (16, 64, 256):
        exact = sum(srw_stay_nonneg(n) for n in range(L))
        t = []
        for _ in range(4000):
            s = walk.ladder_sample(srw(), L, r)
            t.append(s.descending_epochs[1] if s.descending_epochs.size > 1 else L)
        m, se = mean_se(t)
        assert within(m, exact, se)
    # E[T ^ L] / sqrt(L) -> sqrt(8 / pi), with O(L^{-1/2}) corrections
    e = [sum(srw_stay_nonneg(n) for n in range(L)) / math.sqrt(L) for L in (64, 256, 1024)]
    assert abs(e[2] - e[1]) < abs(e[1] - e[0]) and abs(e[2] - math.sqrt(8 / math.pi)) < 0.05


# ---------------------------------------------------------------------------
# renewal functions

@pytest.mark.parametrize("method", ["dp", "nystrom"])
def test_renewal_at_zero(method):
    d = srw() if method == "dp" else GAUSS
    for f in (walk.renewal_minus, walk.renewal_plus):
        v, e = f(d, [0.0], method)
        assert abs(v[0] - 1.0) <= max(e[0], 1e-12)


def test_srw_renewal_floor_plus_one():
    u = np.array([0, 0.5, 1, 2.99, 3, 7.5, 20])
    v, e = walk.renewal_minus(srw(), u, "dp")
    assert np.allclose(v, np.floor(u) + 1, atol=1e-9)
    assert walk.renewal_minus(srw(), [3.0], "dp")[0][0] == pytest.approx(4.0, abs=1e-9)


def test_dp_rejects_continuous_law():
    with pytest.raises(ValueError):
        walk.renewal_table(GAUSS, [1.0], "dp")
    with pytest.raises(ValueError):
        walk.renewal_table(srw(), [1.0], "nystrom")
    with pytest.raises(ValueError):
        walk.renewal_table(srw(), [-1.0], "dp")


def test_gaussian_renewal_slope():
    # R^-(u) ~ u / E|H| = sqrt(2) u / sigma
    u = np.linspace(20, 60, 9)
    v, _ = walk.renewal_minus(GAUSS, u, "nystrom")
    slope = np.diff(v) / np.diff(u)
    assert np.all(slope > 0)
    assert (slope.max() - slope.min()) / slope.mean() < 0.05
    assert slope.mean() == pytest.approx(math.sqrt(2) / GAUSS.sigma, rel=0.01)


def test_renewal_mc_matches_dp():
    grid = np.arange(0, 21, dtype=float)
    dp = walk.renewal_table(skewed_lattice(), grid, "dp")
    mc = walk.renewal_table(skewed_lattice(), grid, "mc", n=20_000, rng=rng(3))
    assert np.all(np.abs(mc.r_minus - dp.r_minus) <= 3 * mc.error_minus + 1e-12)
    assert np.all(np.abs(mc.r_plus - dp.r_plus) <= 3 * mc.error_plus + 1e-12)
    assert dp.is_monotone() and mc.is_monotone()


def test_affine_band():
    t = walk.renewal_table(skewed_lattice(), np.arange(0, 101, dtype=float), "dp")
    lo, hi = t.affine_band(10, 100)
    assert 0 < lo <= hi < np.inf


def test_theta0_and_K_for_srw():
    tab = lattice.lattice_renewal(srw(), 50)
    # theta_0 = sum_m Catalan(m) 4^{-m} = 2
    assert abs(tab.theta0.value - 2.0) <= max(tab.theta0.error_bound, 0) + 1e-6
    assert np.allclose(tab.K(np.arange(0, 20)), 1.0, atol=1e-9)


def test_catalan_series_oracle():
    # the generating-function identity behind theta_0 = 2, independent of the DP
    m = np.arange(0, 200_000)
    cat = np.exp(special.gammaln(2 * m + 1) - special.gammaln(m + 1) - special.gammaln(m + 2) - m * math.log(4))
    partial = cat.sum()
    assert 2.0 - partial < 0.01 and 2.0 - partial > 0


def test_tilde_R_at_zero_is_R_minus():
    for x in (0, 1, 4, 9):
        q = walk.tilde_R(srw(), x, 0)
        assert q.value == pytest.approx(x + 1, abs=1e-6)


# ---------------------------------------------------------------------------
# identities and bounds

def test_harmonicity_srw_exact():
    for u in range(0, 12):
        for which in ("minus", "plus"):
            r = walk.check_harmonicity(srw(), float(u), "exact", which=which)
            assert abs(r.residual) < 1e-9


def test_harmonicity_gaussian():
    for u in (0.0, 5.0):
        assert walk.check_harmonicity(GAUSS, u, "exact").passes()
        assert walk.check_harmonicity(GAUSS, u, "mc", n=100_000, rng=rng(4)).passes()


def test_renewal_identity_flagship():
    r = walk.check_renewal_identity(srw(), 6, 2)
    assert r.passes and abs(r.residual) <= 1e-5


def test_renewal_identity_srw_head_term():
    tab = lattice.lattice_renewal(srw(), 50)
    assert float(tab.R_plus(1) - tab.K(1)) == pytest.approx(1.0, abs=1e-9)
    assert walk.check_renewal_identity(srw(), 10, 1).passes


def test_renewal_identity_rejects_a_zero():
    with pytest.raises(ValueError, match="a = 0"):
        walk.check_renewal_identity(srw(), 5, 0)
    with pytest.raises(ValueError):
        walk.check_renewal_identity(GAUSS, 5, 1)


def test_correction_limit():
    for a in (1, 3):
        corr, lim = walk.correction_limit(skewed_lattice(), a)
        assert corr == pytest.approx(lim, rel=0.05)


def test_tilde_increment_bound():
    assert walk.check_tilde_increment_bound(srw(), 5, 2, 0) == 0.0
    sweep = walk.tilde_increment_sweep(srw(), range(0, 21), range(1, 6), range(1, 6))
    assert np.isfinite(sweep).all() and sweep.max() > 0
    along = [walk.check_tilde_increment_bound(srw(), x, 2, 3) for x in (20, 40, 80)]
    assert along[2] <= along[0] * 1.05
    assert sweep[5, 1, 2] == pytest.approx(walk.check_tilde_increment_bound(srw(), 5, 2, 3), rel=1e-9)


def test_kozlov_small_n_exact():
    # of the 4 two-step paths, ++ and +- stay >= 0
    p = lattice.constrained_survival(srw(), 0, 2)
    assert p[2] == pytest.approx(0.5, abs=1e-15)
    p = lattice.constrained_survival(srw(), 0, 200)
    assert np.allclose(p[1:], [srw_stay_nonneg(n) for n in range(1, 201)], rtol=1e-10)


def test_kozlov_table_stabilizes():
    tab = walk.kozlov_check(srw(), [0, 1, 2], [100, 1000, 10_000], 200_000, rng(5))
    assert np.all(tab.stability() < 0.10)
    # shape: the column at the largest n is proportional to R^-(u)
    assert np.all(np.abs(tab.relative_residual[:, -1]) < 0.10)
    exact = lattice.constrained_survival(srw(), 2, 100)[100] * 10
    assert within(tab.table[2, 0], exact, tab.stderr[2, 0])


def test_ballot_bound():
    ex = walk.ballot_bound_check(srw(), 2, 2, 1, [100], mode="exact")
    assert np.isfinite(ex.maximum) and ex.maximum > 0
    mc = walk.ballot_bound_check(srw(), 2, 2, 1, [1000, 10_000], N=40_000, rng=rng(6))
    r, s = mc.ratios, mc.stderr
    assert r[1] <= r[0] + 3 * math.hypot(*s)
    big = walk.ballot_bound_check(srw(), 2, 2, 400, [100], mode="exact")
    small = walk.ballot_bound_check(srw(), 2, 2, 10, [100], mode="exact")
    assert big.maximum < small.maximum


def test_green_sum():
    # the summands decay like l^{-3/2}, so the truncation tail shrinks like L^{-1/2}
    inc = [walk.green_sum(srw(), 1.0, 0, 0, L, mode="exact").tail_increment for L in (200, 800, 3200)]
    assert inc[0] > inc[1] > inc[2] > 0
    assert inc[1] / inc[0] == pytest.approx(0.5, rel=0.1)
    assert inc[2] / inc[1] == pytest.approx(0.5, rel=0.05)
    vals = [walk.green_sum(srw(), 1.0, z, 0, 200, mode="exact").estimate.value for z in (0, 2, 5, 10)]
    assert np.all(np.isfinite(vals)) and max(vals) < 10 * min(vals)
    mc = walk.green_sum(srw(), 1.0, 2, 20_000, 200, rng=rng(7))
    assert within(mc.estimate.value, vals[1], mc.estimate.stderr)


def test_green_sum_enumeration():
    # brute force over all 2^10 paths
    L, z = 10, 1
    steps = np.array(np.meshgrid(*[[-1, 1]] * L)).reshape(L, -1).T
    path = z + np.concatenate([np.zeros((steps.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
    ok = np.minimum.accumulate(path, axis=1) >= 0
    brute = float(np.where(ok, np.exp(-path), 0.0).sum(axis=1).mean())
    part = lattice.green_sum_exact(srw(), 1.0, z, L)
    assert part[-1] == pytest.approx(brute, rel=1e-12)


def test_killed_walk_checkpoints_validated():
    with pytest.raises(ValueError):
        killed_walks(srw(), 10, 0.0, -1.0, [5, 3], rng(8))
