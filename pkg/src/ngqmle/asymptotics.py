"""Asymptotic covariances of the Gaussian, oracle and two-step estimators.

With k_t = (1/sigma, v_t^{-1} dv_t/dgamma')', M = E k k', and the moment
functionals of :class:`~ngqmle.likelihoods.MomentFunctionals`:

    Sigma_G  = E(eps^2-1)^2 / 4 * M^{-1}
    Sigma_1  = A * M^{-1},              A = E h1^2 / (E h2)^2
    Sigma_2  = Sigma_1 + sigma0^2 * mu * e1 e1',  mu = E(eps^2-1)^2/4 - A
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ngqmle.eta import eta_empirical, eta_population
from ngqmle.likelihoods import (
    InnovationDistribution,
    MomentFunctionals,
    QuasiLikelihood,
    empirical_moment_functionals,
    moment_functionals,
)
from ngqmle.volatility import GarchParams, filter as vol_filter, simulate


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


def param_names(p: int, q: int) -> list[str]:
    return ["sigma"] + [f"a{i + 1}" for i in range(p)] + [f"b{j + 1}" for j in range(q)]


@dataclass(frozen=True)
class KMatrixStats:
    M: np.ndarray
    k_bar: np.ndarray
    V: np.ndarray  # inverse of Var(y), y = v^{-1} dv/dgamma
    y_bar: np.ndarray
    sigma: float
    n_obs: int

    @property
    def N(self) -> np.ndarray:
        return np.outer(self.k_bar, self.k_bar)


def _stats_from_k(y: np.ndarray, sigma: float, p: int, q: int) -> KMatrixStats:
    T = y.shape[0]
    y_bar = y.mean(axis=0)
    yy = y.T @ y / T
    var_y = yy - np.outer(y_bar, y_bar)
    var_y = 0.5 * (var_y + var_y.T)
    names = param_names(p, q)[1:]
    w, vecs = np.linalg.eigh(var_y)
    scale = max(float(np.max(np.diag(yy))), 1e-300)
    if w[0] <= 1e-10 * scale:
        culprit = names[int(np.argmax(np.abs(vecs[:, 0])))]
        raise SingularDesignError(
            f"M is singular: the volatility gradient for {culprit} is collinear with the scale term",
            parameter=culprit,
        )
    k_bar = np.concatenate([[1.0 / sigma], y_bar])
    n = 1 + y.shape[1]
    M = np.empty((n, n))
    M[0, 0] = 1.0 / sigma**2
    M[0, 1:] = M[1:, 0] = y_bar / sigma
    M[1:, 1:] = yy
    V = np.linalg.inv(var_y)
    return KMatrixStats(M, k_bar, 0.5 * (V + V.T), y_bar, sigma, T)


def k_stats(fit, returns) -> KMatrixStats:
    """Sample moments of k_t at a fitted parameter (uses the fit's presample)."""
    params = fit.params
    path = vol_filter(params, returns, fit.presample)
    y = path.grad / path.v[:, None]
    return _stats_from_k(y, params.sigma, params.a.size, params.b.size)


def k_stats_at(params: GarchParams, returns, presample=None) -> KMatrixStats:
    path = vol_filter(params, returns, presample)
    return _stats_from_k(path.grad / path.v[:, None], params.sigma, params.a.size, params.b.size)


def population_k_stats(
    params: GarchParams, innov: InnovationDistribution, n: int = 200_000, seed: int = 0, burn_in: int = 1000
) -> KMatrixStats:
    """M and friends at the true parameter, by averaging along one long simulated path."""
    x = simulate(params, innov, n, burn_in=burn_in, seed=seed)
    return k_stats_at(params, x)


def block_inverse(stats: KMatrixStats) -> np.ndarray:
    """M^{-1} assembled from sigma, y_bar and V (cross-check of the direct inverse)."""
    s, yb, V = stats.sigma, stats.y_bar, stats.V
    n = 1 + yb.size
    out = np.empty((n, n))
    Vy = V @ yb
    out[0, 0] = s**2 * (1.0 + yb @ Vy)
    out[0, 1:] = out[1:, 0] = -s * Vy
    out[1:, 1:] = V
    return out


def m_inverse(stats: KMatrixStats) -> np.ndarray:
    try:
        cf = linalg.cho_factor(stats.M)
    except linalg.LinAlgError as exc:
        raise SingularDesignError(f"M is not positive definite: {exc}") from exc
    Minv = linalg.cho_solve(cf, np.eye(stats.M.shape[0]))
    return 0.5 * (Minv + Minv.T)


@dataclass(frozen=True)
class CovarianceBlocks:
    sigma_G: np.ndarray
    sigma_1: np.ndarray
    sigma_2: np.ndarray
    sigma_eta: float
    pi: np.ndarray  # covariance of eta-hat with theta-hat (row vector)
    xi: np.ndarray  # covariance of Gaussian and two-step estimates
    m_inv: np.ndarray

    def standard_errors(self, T: int) -> dict:
        return {
            "gaussian": np.sqrt(np.clip(np.diag(self.sigma_G), 0, None) / T),
            "oracle": np.sqrt(np.clip(np.diag(self.sigma_1), 0, None) / T),
            "two_step": np.sqrt(np.clip(np.diag(self.sigma_2), 0, None) / T),
            "eta": float(np.sqrt(max(self.sigma_eta, 0.0) / T)),
        }

    def to_dict(self) -> dict:
        return {
            "sigma_G": self.sigma_G.tolist(),
            "sigma_1": self.sigma_1.tolist(),
            "sigma_2": self.sigma_2.tolist(),
            "sigma_eta": self.sigma_eta,
            "pi": self.pi.tolist(),
            "xi": self.xi.tolist(),
        }


def covariance_blocks(
    stats: KMatrixStats, functionals: MomentFunctionals, sigma0: float, eta: float
) -> CovarianceBlocks:
    Minv = m_inverse(stats)
    n = Minv.shape[0]
    e1 = np.zeros((n, n))
    e1[0, 0] = 1.0
    fn = functionals
    A = fn.a_value
    kurt4 = fn.e_eps4 / 4
    # C = E[(eps^2-1)(h1/Eh2 - (eps^2-1)/2)]
    C = fn.e_h1_eps / fn.e_h2 - fn.e_eps4 / 2
    sigma_G = kurt4 * Minv
    sigma_1 = A * Minv
    sigma_2 = sigma_1 + sigma0**2 * (kurt4 - A) * e1
    sigma_eta = eta**2 * (kurt4 - fn.e_h1_eps / fn.e_h2 + A)
    pi = np.zeros(n)
    pi[0] = eta * sigma0 / 2 * C
    xi = fn.e_h1_eps / (2 * fn.e_h2) * Minv - sigma0**2 / 2 * C * e1
    return CovarianceBlocks(sigma_G, sigma_1, sigma_2, float(sigma_eta), pi, xi, Minv)


def population_functionals(f: QuasiLikelihood, g: InnovationDistribution) -> tuple[float, MomentFunctionals]:
    """(eta_f, functionals) by quadrature."""
    eta = 1.0 if f.is_gaussian else eta_population(f, g).eta
    return eta, moment_functionals(f, g, eta)


def sampled_functionals(
    f: QuasiLikelihood, g: InnovationDistribution, n: int = 2_000_000, seed: int = 12345
) -> tuple[float, MomentFunctionals]:
    """Monte Carlo stand-in for :func:`population_functionals` (laws without a density)."""
    eps = g.sample(n, seed)
    eta = eta_empirical(f, eps).eta
    return eta, empirical_moment_functionals(f, eps, eta)


def mu(f: QuasiLikelihood, g: InnovationDistribution) -> float:
    return population_functionals(f, g)[1].mu


def a_value(f: QuasiLikelihood, g: InnovationDistribution) -> float:
    return population_functionals(f, g)[1].a_value


def mle_gap(f: QuasiLikelihood, g: InnovationDistribution) -> tuple[float, float]:
    """Coefficients (c_M, c_e1) with Sigma_2 - Sigma_M = c_M M^{-1} + sigma0^2 c_e1 e1 e1'."""
    _, fn = population_functionals(f, g)
    return fn.a_value - 1.0 / fn.fisher_gap, fn.mu


def mu_table(likelihoods, innovations) -> np.ndarray:
    out = np.empty((len(likelihoods), len(innovations)))
    for i, f in enumerate(likelihoods):
        for j, g in enumerate(innovations):
            out[i, j] = mu(f, g)
    return out


def sigma_g_minus_sigma_2(stats: KMatrixStats, mu_value: float) -> np.ndarray:
    """mu * [[s^2 y'Vy, -s y'V], [-s V y, V]]."""
    s, yb, V = stats.sigma, stats.y_bar, stats.V
    n = 1 + yb.size
    out = np.empty((n, n))
    Vy = V @ yb
    out[0, 0] = s**2 * (yb @ Vy)
    out[0, 1:] = out[1:, 0] = -s * Vy
    out[1:, 1:] = V
    return mu_value * out
