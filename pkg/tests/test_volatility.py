import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_params
from ngqmle.likelihoods import InnovationDistribution
from ngqmle.volatility import (
    ClassicGarchParams,
    GarchOrder,
    GarchParams,
    InvalidParameterError,
    Presample,
    covariance_stationary,
    data_presample,
    filter,
    from_classic,
    simulate,
    to_classic,
)


def naive_filter(params, x, pre):
    p, q = params.a.size, params.b.size
    v2 = np.empty(x.size)
    for t in range(x.size):
        s = 1.0
        for i in range(p):
            s += params.a[i] * (x[t - 1 - i] ** 2 if t - 1 - i >= 0 else pre.x2)
        for j in range(q):
            s += params.b[j] * (v2[t - 1 - j] if t - 1 - j >= 0 else pre.v2)
        v2[t] = s
    return np.sqrt(v2)


def test_order_parse_and_validation():
    assert GarchOrder.parse("2,1") == GarchOrder(2, 1)
    assert GarchOrder(1, 1).n_params == 3
    with pytest.raises(InvalidParameterError):
        GarchOrder(0, 0)


@pytest.mark.parametrize(
    "sigma,a,b",
    [(0.0, [0.1], [0.1]), (-1.0, [0.1], [0.1]), (1.0, [-0.1], [0.1]), (1.0, [0.1], [1.0]), (np.nan, [0.1], [0.1])],
)
def test_invalid_params_rejected(sigma, a, b):
    with pytest.raises(InvalidParameterError):
        GarchParams(sigma, a, b)


def test_params_are_immutable_and_round_trip():
    p = GarchParams(0.5, [0.35], [0.3])
    with pytest.raises(ValueError):
        p.a[0] = 1.0
    assert GarchParams.from_dict(p.to_dict()) == p
    assert GarchParams.from_vector(p.to_vector(), p.order) == p


def test_classic_mapping():
    p = GarchParams(0.5, [0.35, 0.1], [0.3])
    c = to_classic(p)
    assert c.c == pytest.approx(0.25)
    np.testing.assert_allclose(c.a_tilde, [0.0875, 0.025])
    back = from_classic(c)
    np.testing.assert_allclose(back.to_vector(), p.to_vector(), rtol=1e-14)
    with pytest.raises(InvalidParameterError):
        from_classic(ClassicGarchParams(0.0, np.array([0.1]), np.array([0.1])))


def test_covariance_stationary_margin():
    ok, m = covariance_stationary(GarchParams(0.5, [0.35], [0.3]))
    assert ok and m == pytest.approx(1 - 0.25 * 0.35 - 0.3)
    ok, m = covariance_stationary(GarchParams(1.0, [0.5], [0.6]))
    assert not ok and m < 0


def test_filter_matches_naive_recursion(t5_path):
    p = GarchParams(0.7, [0.2, 0.05], [0.4, 0.2])
    pre = Presample(2.0, 0.3)
    path = filter(p, t5_path[:400], pre)
    np.testing.assert_allclose(path.v, naive_filter(p, t5_path[:400], pre), rtol=1e-13)


def test_filter_gradient_finite_difference(t5_path):
    rng = np.random.default_rng(1)
    x = t5_path[:500]
    for _ in range(10):
        p = random_params(rng, 2, 2)
        pre = data_presample(x)
        path = filter(p, x, pre)
        gamma = p.gamma
        for k in range(gamma.size):
            h = 1e-6 * max(1.0, abs(gamma[k]))
            gp, gm = gamma.copy(), gamma.copy()
            gp[k] += h
            gm[k] = max(gm[k] - h, 0.0)
            vp = filter(GarchParams(p.sigma, gp[:2], gp[2:]), x, pre).v
            vm = filter(GarchParams(p.sigma, gm[:2], gm[2:]), x, pre).v
            fd = (vp - vm) / (gp[k] - gm[k])
            np.testing.assert_allclose(path.grad[:, k], fd, rtol=1e-5, atol=1e-8)


def test_filter_rejects_short_or_bad_input():
    p = GarchParams(0.5, [0.35], [0.3])
    with pytest.raises(ValueError):
        filter(p, [0.1, 0.2])
    with pytest.raises(ValueError):
        filter(p, [0.1, np.nan, 0.2, 0.3])
    with pytest.raises(ValueError):
        filter(p, [])


def test_arch_only_and_constant_volatility():
    x = np.random.default_rng(0).standard_normal(50)
    p = GarchParams(1.0, [0.0], [0.0])
    np.testing.assert_array_equal(filter(p, x).v, np.ones(50))
    p = GarchParams(1.0, [0.2], np.zeros(0))
    path = filter(p, x)
    np.testing.assert_allclose(path.v[1:] ** 2, 1 + 0.2 * x[:-1] ** 2)


def test_simulate_reproducible_and_scaled():
    p = GarchParams(0.5, [0.35], [0.3])
    g = InnovationDistribution("student_t", 7.0)
    x1 = simulate(p, g, 2000, seed=5)
    x2 = simulate(p, g, 2000, seed=5)
    np.testing.assert_array_equal(x1, x2)
    assert not np.array_equal(x1, simulate(p, g, 2000, seed=6))
    # unconditional variance sigma^2 / (1 - sigma^2 a - b)
    x = simulate(p, InnovationDistribution("gaussian"), 200_000, seed=9)
    assert np.var(x) == pytest.approx(0.25 / (1 - 0.25 * 0.35 - 0.3), rel=0.03)


def test_simulate_warns_when_not_stationary():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        simulate(GarchParams(1.0, [0.6], [0.5]), InnovationDistribution("gaussian"), 100, seed=1)
    assert any("stationary" in str(m.message) for m in w)


def test_data_presample_depends_on_data_only():
    x = np.random.default_rng(3).standard_normal(100)
    a, b = data_presample(x), data_presample(3 * x)
    assert a.v2 == b.v2
    assert b.x2 == pytest.approx(9 * a.x2)


@settings(max_examples=40, deadline=None)
@given(
    sigma=st.floats(0.1, 3.0),
    a=st.floats(0.0, 2.0),
    b=st.floats(0.0, 0.99),
    scale=st.floats(0.1, 10.0),
)
def test_filter_scale_equivariance(sigma, a, b, scale):
    """Rescaling returns by c maps (sigma, a) to (c sigma, a / c^2) with the same v_t."""
    x = np.random.default_rng(0).standard_normal(60)
    p = GarchParams(sigma, [a], [b])
    q = GarchParams(scale * sigma, [a / scale**2], [b])
    pre = Presample(3.0, 0.5)
    v1 = filter(p, x, pre).v
    v2 = filter(q, scale * x, Presample(3.0, 0.5 * scale**2)).v
    np.testing.assert_allclose(v1, v2, rtol=1e-10)
    assert np.all(v1 >= 1.0)
