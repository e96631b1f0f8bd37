"""Compiled inner loops: volatility recursion and per-observation likelihoods.

Densities are identified by an integer family code plus a fixed-length
parameter vector so that a single compiled objective serves every family.
"""

import math

import numpy as np
from numba import njit

GAUSSIAN = 0
STUDENT_T = 1
GEN_GAUSSIAN = 2
SKEWED_T = 3

# pars layout: [shape, log_norm_const, k_gg, skew, hansen_a, hansen_b]
N_PARS = 6

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def _skew_side(u, pars):
    # u is on the Hansen scale; returns (w, dw/du) for the active half
    lam = pars[3]
    ha = pars[4]
    hb = pars[5]
    if u < -ha / hb:
        s = 1.0 - lam
    else:
        s = 1.0 + lam
    return (hb * u + ha) / s, hb / s


@njit(cache=True)
def logf_h(z, code, pars):
    """log-density and h(z) = z f'(z)/f(z) at a single point."""
    if code == GAUSSIAN:
        return -0.5 * z * z - _HALF_LOG_2PI, -z * z
    elif code == STUDENT_T:
        nu = pars[0]
        d = nu - 2.0 + z * z
        return pars[1] - 0.5 * (nu + 1.0) * math.log1p(z * z / (nu - 2.0)), -(nu + 1.0) * z * z / d
    elif code == GEN_GAUSSIAN:
        beta = pars[0]
        az = abs(z) ** beta
        return pars[1] - pars[2] * az, -beta * pars[2] * az
    else:
        # left-heavy skewed t: density at z is Hansen's density at -z
        nu = pars[0]
        u = -z
        w, dw = _skew_side(u, pars)
        d = nu - 2.0 + w * w
        lf = pars[1] - 0.5 * (nu + 1.0) * math.log1p(w * w / (nu - 2.0))
        return lf, -(nu + 1.0) * u * w * dw / d


@njit(cache=True)
def xhprime(z, code, pars):
    """z * h'(z); continuous everywhere, including gg with shape < 1 at 0."""
    if code == GAUSSIAN:
        return -2.0 * z * z
    elif code == STUDENT_T:
        nu = pars[0]
        d = nu - 2.0 + z * z
        return -2.0 * (nu + 1.0) * (nu - 2.0) * z * z / (d * d)
    elif code == GEN_GAUSSIAN:
        beta = pars[0]
        return -beta * beta * pars[2] * abs(z) ** beta
    else:
        nu = pars[0]
        u = -z
        w, dw = _skew_side(u, pars)
        d = nu - 2.0 + w * w
        # h(u) = -(nu+1) u w w' / d with w linear in u on each half
        return -(nu + 1.0) * u * dw * (w + u * dw) / d + 2.0 * (nu + 1.0) * (u * w * dw) ** 2 / (d * d)


@njit(cache=True)
def eval_logf_h(x, code, pars):
    n = x.shape[0]
    lf = np.empty(n)
    h = np.empty(n)
    for i in range(n):
        lf[i], h[i] = logf_h(x[i], code, pars)
    return lf, h


@njit(cache=True)
def eval_xhprime(x, code, pars):
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = xhprime(x[i], code, pars)
    return out


@njit(cache=True)
def garch_filter(x, a, b, v2_0, x2_0):
    """v_t^2 and d v_t^2 / d gamma with fixed presample values."""
    T = x.shape[0]
    p = a.shape[0]
    q = b.shape[0]
    v2 = np.empty(T)
    dv2 = np.zeros((T, p + q))
    for t in range(T):
        s = 1.0
        for i in range(p):
            if t - 1 - i >= 0:
                xs = x[t - 1 - i] * x[t - 1 - i]
            else:
                xs = x2_0
            s += a[i] * xs
            dv2[t, i] = xs
        for j in range(q):
            if t - 1 - j >= 0:
                vs = v2[t - 1 - j]
                s += b[j] * vs
                dv2[t, p + j] += vs
                for k in range(p + q):
                    dv2[t, k] += b[j] * dv2[t - 1 - j, k]
            else:
                s += b[j] * v2_0
                dv2[t, p + j] += v2_0
        v2[t] = s if s > 1.0 else 1.0
    return v2, dv2


@njit(cache=True)
def mean_loglik(x, sigma, a, b, v2_0, x2_0, eta, code, pars):
    """Mean of -log(sigma v_t) + log f(x_t / (eta sigma v_t)) and its gradient in (sigma, gamma)."""
    T = x.shape[0]
    p = a.shape[0]
    q = b.shape[0]
    v2, dv2 = garch_filter(x, a, b, v2_0, x2_0)
    grad = np.zeros(1 + p + q)
    ll = 0.0
    for t in range(T):
        v = math.sqrt(v2[t])
        z = x[t] / (eta * sigma * v)
        lf, h = logf_h(z, code, pars)
        ll += -math.log(sigma * v) + lf
        w = 1.0 + h
        grad[0] -= w / sigma
        c = w / (2.0 * v2[t])
        for k in range(p + q):
            grad[1 + k] -= c * dv2[t, k]
    return ll / T, grad / T


@njit(cache=True)
def garch_simulate(eps, sigma, a, b, v2_0, x2_0):
    T = eps.shape[0]
    p = a.shape[0]
    q = b.shape[0]
    x = np.empty(T)
    v2 = np.empty(T)
    for t in range(T):
        s = 1.0
        for i in range(p):
            s += a[i] * (x[t - 1 - i] * x[t - 1 - i] if t - 1 - i >= 0 else x2_0)
        for j in range(q):
            s += b[j] * (v2[t - 1 - j] if t - 1 - j >= 0 else v2_0)
        v2[t] = s if s > 1.0 else 1.0
        x[t] = sigma * math.sqrt(v2[t]) * eps[t]
    return x
