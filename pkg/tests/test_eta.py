import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngqmle.eta import (
    EtaBracketError,
    eta_empirical,
    eta_gg_closed_form,
    eta_population,
    h_profile,
    q_profile,
    sample_q,
)
from ngqmle.likelihoods import InnovationDistribution, QuasiLikelihood

# frozen values from an independent 30-digit mpmath quadrature + root solve
FROZEN = {
    ("t:4", "t:5"): 1.05306651014,
    ("t:4", "gg:1"): 1.00896910157,
    ("gg:1", "t:7"): 1.07368985823,
}


@pytest.mark.parametrize("f", ["t:4", "t:2.5", "gg:0.6", "gg:1.8", "gaussian"])
def test_eta_is_one_when_likelihood_is_true(f):
    f = QuasiLikelihood.parse(f)
    g = InnovationDistribution(f.family, f.shape)
    assert eta_population(f, g).eta == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("g", ["t:5", "gg:0.6", "skewed_t:7,0.5", "gaussian"])
def test_eta_gaussian_likelihood_is_one(g):
    assert eta_population(QuasiLikelihood.gaussian(), InnovationDistribution.parse(g)).eta == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("beta,g", [(0.4, "t:5"), (1.0, "gg:0.6"), (1.2, "gg:1"), (1.8, "t:11")])
def test_gg_solver_matches_closed_form(beta, g):
    f = QuasiLikelihood.gen_gaussian(beta)
    g = InnovationDistribution.parse(g)
    assert eta_population(f, g).eta == pytest.approx(eta_gg_closed_form(f, g), rel=1e-7)


def test_frozen_values():
    for (fl, gl), val in FROZEN.items():
        f, g = QuasiLikelihood.parse(fl), InnovationDistribution.parse(gl)
        assert eta_population(f, g).eta == pytest.approx(val, rel=1e-9)


def test_solution_is_root_and_maximizer():
    f, g = QuasiLikelihood.student_t(4), InnovationDistribution("generalized_gaussian", 1.0)
    sol = eta_population(f, g)
    assert abs(sol.h_mean_residual) < 1e-10
    grid = sol.eta * np.array([0.9, 0.97, 1.0, 1.03, 1.1])
    q = q_profile(f, g, grid)
    assert np.argmax(q) == 2
    hp = h_profile(f, g, grid)
    assert np.all(np.diff(hp) > 0)


def test_empirical_gaussian_closed_form():
    eps = np.random.default_rng(0).standard_t(6, 1000)
    assert eta_empirical(QuasiLikelihood.gaussian(), eps).eta == pytest.approx(np.sqrt(np.mean(eps**2)), rel=1e-14)


def test_empirical_converges_to_population():
    f, g = QuasiLikelihood.student_t(4), InnovationDistribution("student_t", 7.0)
    eps = g.sample(1_000_000, seed=11)
    assert eta_empirical(f, eps).eta == pytest.approx(eta_population(f, g).eta, abs=3e-3)


def test_empirical_input_validation():
    f = QuasiLikelihood.student_t(4)
    with pytest.raises(ValueError):
        eta_empirical(f, np.ones(10))
    with pytest.raises(ValueError):
        eta_empirical(f, np.zeros(100))
    with pytest.raises(ValueError):
        eta_empirical(f, np.r_[np.ones(50), np.nan])


def test_bracket_failure_reported():
    # mostly exact zeros: H stays positive on the whole bracket
    eps = np.r_[np.zeros(99_990), np.ones(10) * 1e-9]
    with pytest.raises(EtaBracketError):
        eta_empirical(QuasiLikelihood.student_t(4), eps)


def test_population_requires_density():
    with pytest.raises(ValueError):
        eta_population(QuasiLikelihood.student_t(4), InnovationDistribution("transformed_stable", 1.5))


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.2, 5.0), nu=st.floats(2.3, 30.0))
def test_empirical_scale_equivariance(scale, nu):
    eps = np.random.default_rng(2).standard_normal(500)
    f = QuasiLikelihood.student_t(nu)
    e1 = eta_empirical(f, eps).eta
    e2 = eta_empirical(f, scale * eps).eta
    assert e2 == pytest.approx(scale * e1, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(eta=st.floats(0.3, 3.0), beta=st.floats(0.3, 2.5))
def test_sample_q_derivative(eta, beta):
    eps = np.random.default_rng(5).standard_t(5, 400)
    f = QuasiLikelihood.gen_gaussian(beta)
    _, d = sample_q(f, eps, eta)
    h = 1e-6 * eta
    fd = (sample_q(f, eps, eta + h)[0] - sample_q(f, eps, eta - h)[0]) / (2 * h)
    assert d == pytest.approx(fd, rel=1e-5, abs=1e-8)
