import math

import numpy as np
import pytest
from scipy import integrate, stats

from brwlab.models import (Family, PointProcessSpec, StepDistribution, make_spec, sample_offspring,
                           sample_tilted_offspring, skewed_lattice, spec_from_config, spec_to_config,
                           spine_step_law, srw, validate_boundary)

from conftest import mean_se, within


def test_p1_parameters():
    s = make_spec(p=1.0)
    assert s.mu == pytest.approx(1.386294, abs=1e-6)
    assert s.sigma_g2 == pytest.approx(2 * math.log(2), abs=1e-15)


def test_p08_parameters_solve_both_conditions():
    s = make_spec(p=0.8)
    assert s.sigma_g2 == pytest.approx(0.940007, abs=1e-6)
    # closed form of the two lognormal moments, as an oracle independent of the quadrature
    assert 2 * s.p * math.exp(-s.mu + s.sigma_g2 / 2) == pytest.approx(1.0, abs=1e-14)
    assert s.mu - s.sigma_g2 == 0.0


@pytest.mark.parametrize("p", [0.5, 0.3, 1.01, 0.0])
def test_invalid_p_rejected(p):
    with pytest.raises(ValueError):
        make_spec(p=p)


@pytest.mark.parametrize("p", [0.6, 0.8, 1.0])
def test_validate_boundary_residuals(p):
    rep = validate_boundary(make_spec(p=p))
    assert rep.residual_mass < 1e-10 and rep.residual_tilt < 1e-10
    assert rep.ok()


def test_sigma2_spine_is_2ln2():
    assert validate_boundary(make_spec(p=1.0)).sigma2_spine == pytest.approx(2 * math.log(2), abs=1e-10)


def test_corrupted_spec_detected():
    s = make_spec(p=1.0)
    bad = PointProcessSpec(Family.GAUSSIAN_DYADIC, 1.0, s.mu + 0.1, s.sigma_g2)
    rep = validate_boundary(bad)
    assert rep.residual_tilt > 1e-3
    assert not rep.ok()


def test_sample_offspring_single_draw_shapes(rng, spec08):
    sizes = {sample_offspring(spec08, rng).displacements.size for _ in range(200)}
    assert sizes == {0, 2}


def test_sample_offspring_statistics(rng, spec08):
    n = 1_000_000
    branch, disp = sample_offspring(spec08, rng, n)
    f = branch.mean()
    assert within(f, 0.8, math.sqrt(0.8 * 0.2 / n))
    m, se = mean_se(disp[:, 0])
    assert within(m, spec08.mu, se)
    w = np.where(branch, np.exp(-disp).sum(axis=1), 0.0)
    m, se = mean_se(w)
    assert within(m, 1.0, se)


def test_spine_step_law_p1():
    d = spine_step_law(make_spec(p=1.0))
    assert d.kind == "gaussian" and d.mean == 0.0
    assert d.variance == pytest.approx(2 * math.log(2), abs=1e-15)


@pytest.mark.parametrize("p", [0.55, 0.7, 0.9, 1.0])
def test_spine_step_variance_matches_validation(p):
    s = make_spec(p=p)
    assert spine_step_law(s).variance == pytest.approx(validate_boundary(s).sigma2_spine, abs=1e-10)


def test_tilted_sampler_matches_spine_law(rng, spec1):
    spine, sib = sample_tilted_offspring(spec1, rng, 100_000)
    assert stats.kstest(spine, spine_step_law(spec1).frozen().cdf).pvalue > 0.01


def test_tilted_sibling_and_spine_means(rng, spec1):
    spine, sib = sample_tilted_offspring(spec1, rng, 1_000_000)
    m, se = mean_se(sib)
    assert within(m, spec1.mu, se)
    m, se = mean_se(spine)
    assert within(m, 0.0, se)


def test_tilted_draw_always_one_sibling(rng, spec08):
    for _ in range(100):
        assert sample_tilted_offspring(spec08, rng).sibling_displacements.size == 1


def test_tilt_factorization_identity(rng, spec08):
    # E_Q[f(spine) g(sib)] = E[sum_z e^{-V(z)} f(V(z)) g(V(other))] with f = 1{< 0}, g = identity
    n = 1_000_000
    branch, disp = sample_offspring(spec08, rng, n)
    lhs = np.where(branch, np.exp(-disp[:, 0]) * (disp[:, 0] < 0) * disp[:, 1]
                   + np.exp(-disp[:, 1]) * (disp[:, 1] < 0) * disp[:, 0], 0.0)
    spine, sib = sample_tilted_offspring(spec08, rng, n)
    rhs = (spine < 0) * sib
    (a, sa), (b, sb) = mean_se(lhs), mean_se(rhs)
    assert within(a, b, math.hypot(sa, sb))


def test_step_distribution_validation():
    with pytest.raises(ValueError):
        StepDistribution.lattice((-1, 2), (0.5, 0.5))
    with pytest.raises(ValueError):
        StepDistribution.lattice((-1, 1), (0.4, 0.5))
    with pytest.raises(ValueError):
        StepDistribution.gaussian(0.0)
    assert srw().variance == 1.0
    sk = skewed_lattice()
    assert sk.mean == 0.0 and sk.variance > 0
    assert sk.probs != tuple(reversed(sk.probs))


def test_lattice_cdf():
    d = srw()
    assert np.allclose(d.cdf([-2, -1, 0, 1, 5]), [0, 0.5, 0.5, 1, 1])


def test_config_roundtrip():
    s = make_spec(p=0.8)
    assert spec_from_config(spec_to_config(s)) == s
    with pytest.raises(ValueError, match="colour"):
        spec_from_config({"p": 0.8, "colour": "red"})


def test_quadrature_oracle_is_independent():
    # a direct quadrature of the tilted second moment, with a different integration scheme
    s = make_spec(p=0.6)
    f = lambda v: 2 * s.p * v * v * np.exp(-v) * stats.norm(s.mu, s.sigma_g).pdf(v)
    val = integrate.fixed_quad(f, s.mu - 15 * s.sigma_g, s.mu + 15 * s.sigma_g, n=400)[0]
    assert val == pytest.approx(validate_boundary(s).sigma2_spine, rel=1e-9)
