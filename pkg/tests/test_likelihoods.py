import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from ngqmle.likelihoods import (
    InnovationDistribution,
    QuasiLikelihood,
    empirical_moment_functionals,
    expect,
    gg_k,
    moment_functionals,
    stable_abs_moment,
)

DENSITY_LAWS = [
    InnovationDistribution("gaussian"),
    InnovationDistribution("student_t", 2.5),
    InnovationDistribution("student_t", 4.5),
    InnovationDistribution("student_t", 11.0),
    InnovationDistribution("generalized_gaussian", 0.2),
    InnovationDistribution("generalized_gaussian", 0.6),
    InnovationDistribution("generalized_gaussian", 2.0),
    InnovationDistribution("generalized_gaussian", 4.0),
    InnovationDistribution("skewed_t", 7.0, 0.5),
    InnovationDistribution("skewed_t", 5.0, -0.3),
]

QLS = [
    QuasiLikelihood.gaussian(),
    QuasiLikelihood.student_t(2.5),
    QuasiLikelihood.student_t(4.0),
    QuasiLikelihood.gen_gaussian(0.4),
    QuasiLikelihood.gen_gaussian(1.0),
    QuasiLikelihood.gen_gaussian(1.8),
]


@pytest.mark.parametrize("g", DENSITY_LAWS, ids=lambda g: g.label)
def test_unit_mass_zero_mean_unit_variance(g):
    assert expect(g, lambda x: np.ones_like(x)) == pytest.approx(1.0, abs=1e-9)
    assert expect(g, lambda x: x) == pytest.approx(0.0, abs=1e-9)
    assert expect(g, lambda x: x**2) == pytest.approx(1.0, abs=1e-8)


def test_student_t_density_matches_scipy():
    nu = 5.0
    s = math.sqrt((nu - 2) / nu)
    x = np.linspace(-6, 6, 41)
    f = QuasiLikelihood.student_t(nu)
    np.testing.assert_allclose(f.density(x), stats.t.pdf(x / s, nu) / s, rtol=1e-12)


def test_gg_density_matches_scipy_gennorm():
    beta = 0.7
    k = gg_k(beta)
    scale = k ** (-1 / beta)
    x = np.linspace(-5, 5, 31)
    f = QuasiLikelihood.gen_gaussian(beta)
    np.testing.assert_allclose(f.density(x), stats.gennorm.pdf(x, beta, scale=scale), rtol=1e-12)
    assert QuasiLikelihood.gen_gaussian(2.0).density(0.3) == pytest.approx(stats.norm.pdf(0.3), rel=1e-12)


@pytest.mark.parametrize("f", QLS + [InnovationDistribution("skewed_t", 7.0, 0.5)], ids=lambda f: f.label)
def test_h_is_x_times_score(f):
    x = np.array([-3.1, -1.2, -0.4, 0.37, 0.9, 2.5, 4.0])
    eps = 1e-6
    fd = (f.log_density(x + eps) - f.log_density(x - eps)) / (2 * eps)
    np.testing.assert_allclose(f.h(x), x * fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("f", QLS + [InnovationDistribution("skewed_t", 5.0, -0.3)], ids=lambda f: f.label)
def test_h_prime_finite_difference(f):
    x = np.array([-3.1, -1.2, -0.4, 0.37, 0.9, 2.5])
    eps = 1e-6
    fd = (f.h(x + eps) - f.h(x - eps)) / (2 * eps)
    np.testing.assert_allclose(f.h_prime(x), fd, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(f.x_h_prime(x), x * f.h_prime(x), rtol=1e-12)


def test_h_closed_forms():
    x = np.array([0.5, 2.0])
    np.testing.assert_allclose(QuasiLikelihood.gaussian().h(x), -(x**2))
    np.testing.assert_allclose(QuasiLikelihood.student_t(4).h(x), -5 * x**2 / (2 + x**2))
    beta = 1.0
    np.testing.assert_allclose(QuasiLikelihood.gen_gaussian(beta).h(x), -beta * gg_k(beta) * x**beta)


def test_skewed_t_is_left_heavy():
    g = InnovationDistribution("skewed_t", 7.0, 0.5)
    assert expect(g, lambda x: x**3) < -0.5
    assert g.density(-4.0) > g.density(4.0)
    x = g.sample(400_000, seed=1)
    assert np.mean(x) == pytest.approx(0.0, abs=0.01)
    assert np.var(x) == pytest.approx(1.0, rel=0.02)
    assert stats.skew(x) < 0


def test_stable_moment_closed_form_against_quadrature():
    alpha, p = 1.5, 0.9
    pdf = lambda z: stats.levy_stable.pdf(z, alpha, 0.0)  # noqa: E731
    # scipy's S1 parameterization with beta=0 coincides with the CMS standard form
    val = 2 * integrate.quad(lambda z: z**p * pdf(z), 0, 60, limit=200)[0]
    tail = 2 * integrate.quad(lambda z: z**p * pdf(z), 60, np.inf, limit=200)[0]
    assert stable_abs_moment(alpha, p) == pytest.approx(val + tail, rel=2e-3)


@pytest.mark.parametrize("alpha", [1.1, 1.5, 1.9])
def test_transformed_stable_sample_has_unit_variance(alpha):
    g = InnovationDistribution("transformed_stable", alpha)
    x = g.sample(2_000_000, seed=4)
    assert np.mean(x**2) == pytest.approx(1.0, rel=0.02)
    assert np.mean(x) == pytest.approx(0.0, abs=0.01)
    assert not g.has_density
    with pytest.raises(ValueError):
        g.log_density(0.1)


def test_sampling_is_seeded():
    g = InnovationDistribution("generalized_gaussian", 0.6)
    np.testing.assert_array_equal(g.sample(10, seed=3), g.sample(10, seed=3))
    x = g.sample(500_000, seed=3)
    kurt = special.gamma(5 / 0.6) * special.gamma(1 / 0.6) / special.gamma(3 / 0.6) ** 2
    assert np.mean(x**2) == pytest.approx(1.0, rel=0.01)
    se = np.std(x**4) / np.sqrt(x.size)
    assert abs(np.mean(x**4) - kurt) < 4 * se


@pytest.mark.parametrize(
    "bad",
    [("student_t", 2.0), ("generalized_gaussian", 0.0), ("skewed_t", 5.0, 1.0), ("transformed_stable", 2.0), ("cauchy", 1.0)],
)
def test_invalid_innovations(bad):
    with pytest.raises(ValueError):
        InnovationDistribution(*bad)


def test_parse_and_round_trip():
    for text, label in [("t:4", "t4"), ("gg:1.2", "gg1.2"), ("gaussian", "gaussian"), ("normal", "gaussian")]:
        f = QuasiLikelihood.parse(text)
        assert f.label == label
        assert QuasiLikelihood.from_dict(f.to_dict()) == f
    g = InnovationDistribution.parse("skewed_t:7,0.5")
    assert (g.shape, g.skew) == (7.0, 0.5)
    assert InnovationDistribution.from_dict(g.to_dict()) == g
    assert InnovationDistribution.parse("stable:1.5").family == "transformed_stable"
    with pytest.raises(ValueError):
        QuasiLikelihood.parse("skewed_t:7")


def test_tail_ordering():
    fs = [QuasiLikelihood.student_t(3), QuasiLikelihood.gaussian(), QuasiLikelihood.gen_gaussian(0.4), QuasiLikelihood.student_t(20)]
    ordered = sorted(fs, key=lambda f: f.tail_key())
    assert [f.label for f in ordered] == ["gaussian", "gg0.4", "t20", "t3"]


def test_gaussian_functionals_closed_form():
    g = InnovationDistribution("student_t", 7.0)
    fn = moment_functionals(QuasiLikelihood.gaussian(), g, 1.0)
    # E(eps^2 - 1)^2 = kurtosis - 1 = 3 + 6/(nu-4) - 1
    assert fn.e_eps4 == pytest.approx(4.0, rel=1e-9)
    assert fn.e_h2 == pytest.approx(-2.0, rel=1e-10)
    assert fn.e_h1_sq == pytest.approx(4.0, rel=1e-9)
    assert fn.mu == pytest.approx(0.0, abs=1e-9)


def test_mle_functionals_information_equality():
    g = InnovationDistribution("student_t", 5.0)
    fn = moment_functionals(g.quasi_likelihood(), g, 1.0)
    # E x h'(x) = -E(1 + h)^2 at the true density
    assert fn.e_h2 == pytest.approx(-fn.e_h1_sq, rel=1e-8)
    assert fn.e_h1 == pytest.approx(0.0, abs=1e-10)
    assert fn.a_value == pytest.approx(1.0 / fn.fisher_gap, rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(nu=st.floats(2.2, 30.0), beta=st.floats(0.3, 3.0), scale=st.floats(0.5, 2.0))
def test_empirical_functionals_invariants(nu, beta, scale):
    eps = InnovationDistribution("student_t", 6.0).sample(2000, seed=1)
    for f in (QuasiLikelihood.student_t(nu), QuasiLikelihood.gen_gaussian(beta)):
        fn = empirical_moment_functionals(f, eps, scale)
        assert fn.e_h1_sq >= 0 and fn.e_eps4 >= 0
        assert fn.mu == pytest.approx(fn.e_eps4 / 4 - fn.a_value)
        # x h'(x) < 0 for these families
        assert fn.e_h2 < 0
