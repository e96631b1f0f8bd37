import numpy as np
import pytest

import ngqmle.selection as sel
from ngqmle import asymptotics as asy
from ngqmle.estimators import fit_gaussian, fit_two_step
from ngqmle.likelihoods import InnovationDistribution, QuasiLikelihood
from ngqmle.volatility import GarchParams, simulate


def test_grid_defaults_and_order():
    grid = sel.CandidateGrid()
    labels = [f.label for f in grid.candidates()]
    assert labels[0] == "gaussian"
    assert labels[-1] == "t2.5"
    assert len(labels) == 15
    keys = [f.tail_key() for f in grid.candidates()]
    assert keys == sorted(keys)


def test_grid_validation():
    with pytest.raises(ValueError):
        sel.CandidateGrid(t_dofs=(2.0,))
    with pytest.raises(ValueError):
        sel.CandidateGrid(gg_shapes=(1.5,))
    with pytest.raises(ValueError):
        sel.CandidateGrid(t_dofs=(), gg_shapes=(), include_gaussian=False)
    wide = sel.CandidateGrid.wide()
    assert max(wide.gg_shapes) == 4.0
    assert sel.CandidateGrid.from_dict(wide.to_dict()) == wide


def test_t4_residuals_select_close_to_t4():
    eps = InnovationDistribution("student_t", 4.0).sample(20_000, seed=1)
    choice = sel.choose_likelihood(eps)
    g = InnovationDistribution("student_t", 4.0)
    a_best = asy.a_value(QuasiLikelihood.student_t(4), g)
    assert asy.a_value(choice.chosen, g) <= 1.02 * a_best


def test_gaussian_residuals_select_light_candidate():
    eps = np.random.default_rng(4).standard_normal(20_000)
    choice = sel.choose_likelihood(eps)
    assert choice.chosen.label in {"gaussian", "t20", "t15", "gg1"}


def test_stable_residuals_select_heaviest_t():
    eps = InnovationDistribution("transformed_stable", 1.3).sample(5_000, seed=3)
    assert sel.choose_likelihood(eps).chosen.label == "t2.5"


def test_choice_is_order_invariant():
    eps = InnovationDistribution("student_t", 6.0).sample(3_000, seed=9)
    perm = np.random.default_rng(0).permutation(eps)
    a, b = sel.choose_likelihood(eps), sel.choose_likelihood(perm)
    assert a.chosen == b.chosen
    assert [c.a_value for c in a.table] == [c.a_value for c in b.table]


def test_ties_go_to_lighter_tails(monkeypatch):
    def flat(f, eps):
        return sel.CandidateScore(f, 1.0, 2.0)

    monkeypatch.setattr(sel, "_score", flat)
    assert sel.choose_likelihood(np.ones(10)).chosen.label == "gaussian"
    grid = sel.CandidateGrid(t_dofs=(3, 7), gg_shapes=(0.5,), include_gaussian=False)
    assert sel.choose_likelihood(np.ones(10), grid).chosen.label == "gg0.5"


def test_all_candidates_failing_raises(monkeypatch):
    monkeypatch.setattr(sel, "_score", lambda f, eps: sel.CandidateScore(f, None, None, "boom"))
    with pytest.raises(sel.SelectionError):
        sel.choose_likelihood(np.ones(10))


@pytest.fixture(scope="module")
def t7_two_step(true_params, order11):
    x = simulate(true_params, InnovationDistribution("student_t", 7.0), 4000, seed=21)
    return x, fit_two_step(x, order11, QuasiLikelihood.student_t(4))


def test_per_coordinate_weights_equal_common_weight(t7_two_step):
    x, fit = t7_two_step
    agg = sel.aggregate(fit, x)
    assert not agg.clamped
    np.testing.assert_allclose(agg.weights, agg.w_star, rtol=0, atol=1e-10)


def test_aggregated_variance_not_above_either(t7_two_step):
    x, fit = t7_two_step
    agg = sel.aggregate(fit, x)
    cov = agg.covariance
    lower = np.minimum(np.diag(cov.sigma_G), np.diag(cov.sigma_2))
    assert np.all(agg.sigma_star_diag <= lower * (1 + 1e-10))
    vec = agg.w_star * fit.params.to_vector() + (1 - agg.w_star) * fit.gaussian.params.to_vector()
    np.testing.assert_allclose(agg.params.to_vector(), vec, rtol=1e-12)


def test_weight_near_one_for_heavy_tails():
    # with g = f = t3 the two-step estimator is near efficient and dominates
    eps = InnovationDistribution("student_t", 3.0).sample(200_000, seed=5)
    f = QuasiLikelihood.student_t(3)
    w = sel.aggregation_weight(f, eps, 1.0)
    assert 0.9 < w < 1.1


def test_weight_for_gaussian_likelihood(t5_path, order11):
    fit = fit_two_step(t5_path, order11, QuasiLikelihood.gaussian())
    agg = sel.aggregate(fit, t5_path)
    assert agg.w_star == 0.5
    np.testing.assert_allclose(agg.params.to_vector(), fit.gaussian.params.to_vector(), rtol=1e-5)


def test_weight_degenerate_raises():
    eps = np.random.default_rng(0).standard_normal(1000)
    eps = eps / np.sqrt(np.mean(eps**2))
    with pytest.raises(sel.AggregationError):
        sel.aggregation_weight(QuasiLikelihood.gaussian(), eps, 1.0)


def test_clamp_and_admissible_region():
    p2 = GarchParams(1.0, [0.2], [0.97])
    pg = GarchParams(1.0, [0.1], [0.5])
    params, notes = sel._combine(2.0, p2, pg)
    assert params.b.sum() < 1
    assert notes


def test_four_step_fit(t5_path, order11):
    four = sel.four_step_fit(t5_path, order11)
    assert four.fit.converged
    assert four.likelihood.family in {"student_t", "generalized_gaussian", "gaussian"}
    g = fit_gaussian(t5_path, order11)
    assert four.choice.chosen == sel.choose_likelihood(g.residuals).chosen
