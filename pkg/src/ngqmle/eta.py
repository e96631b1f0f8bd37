"""The scale-correction parameter eta_f.

eta_f maximizes Q(eta) = -log(eta) + E log f(eps / eta). Rather than
maximizing Q (which need not be concave), we solve the first-order
condition H(eta) = E(1 + h(eps / eta)) = 0; H is strictly increasing, so a
bracketed root is unique.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ngqmle.likelihoods import InnovationDistribution, QuasiLikelihood, expect, gg_k

INITIAL_BRACKET = (1e-3, 1e3)
MAX_EXPANSIONS = 6


class EtaBracketError(ArithmeticError):
    """H(eta) kept one sign over the whole expanded bracket."""


@dataclass(frozen=True)
class EtaSolution:
    eta: float
    q_value: float
    h_mean_residual: float
    bracket: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "q_value": self.q_value,
            "h_mean_residual": self.h_mean_residual,
            "bracket": list(self.bracket),
        }


def _bracket(H, lo: float, hi: float) -> tuple[float, float]:
    for _ in range(MAX_EXPANSIONS + 1):
        h_lo, h_hi = H(lo), H(hi)
        if h_lo < 0 < h_hi:
            return lo, hi
        if h_lo >= 0:
            lo /= 10
        if h_hi <= 0:
            hi *= 10
    raise EtaBracketError(
        f"no sign change of H on [{lo:g}, {hi:g}]; the likelihood/innovation pair "
        "violates the tail condition limsup h(x) < -1"
    )


def _solve(H, xtol_rel: float) -> tuple[float, tuple[float, float]]:
    lo, hi = _bracket(H, *INITIAL_BRACKET)
    root = optimize.brentq(H, lo, hi, xtol=1e-300, rtol=max(xtol_rel, 4 * np.finfo(float).eps), maxiter=500)
    return root, (lo, hi)


def population_h(f: QuasiLikelihood, g: InnovationDistribution, eta: float) -> float:
    return expect(g, lambda x: 1.0 + f.h(x / eta))


def population_q(f: QuasiLikelihood, g: InnovationDistribution, eta: float) -> float:
    return -np.log(eta) + expect(g, lambda x: f.log_density(x / eta))


def eta_gg_closed_form(f: QuasiLikelihood, g: InnovationDistribution) -> float:
    """For gg(beta) likelihoods: eta = (beta k_beta E|eps|^beta)^(1/beta)."""
    if f.family != "generalized_gaussian":
        raise ValueError("closed form only exists for generalized Gaussian likelihoods")
    beta = f.shape
    m = expect(g, lambda x: np.abs(x) ** beta)
    return (beta * gg_k(beta) * m) ** (1.0 / beta)


def eta_population(f: QuasiLikelihood, g: InnovationDistribution) -> EtaSolution:
    """Root of H(eta) with expectations taken under the density of g."""
    if not g.has_density:
        raise ValueError(f"{g.label} has no closed-form density; use eta_empirical on a large sample")

    def H(eta):
        return population_h(f, g, eta)

    root, br = _solve(H, 1e-13)
    return EtaSolution(root, population_q(f, g, root), H(root), br)


def _check_residuals(residuals) -> np.ndarray:
    eps = np.asarray(residuals, dtype=float).ravel()
    if eps.size < 30:
        raise ValueError(f"need at least 30 residuals, got {eps.size}")
    if not np.all(np.isfinite(eps)):
        raise ValueError("residuals contain non-finite values")
    if not np.var(eps) > 0:
        raise ValueError("degenerate residuals (zero variance)")
    return eps


def eta_empirical(f: QuasiLikelihood, residuals) -> EtaSolution:
    """Maximizer of the sample analogue of Q, found as the root of the sample H."""
    eps = _check_residuals(residuals)
    if f.is_gaussian:
        # 1 - mean(eps^2)/eta^2 = 0
        eta = float(np.sqrt(np.mean(eps**2)))
        return EtaSolution(eta, _sample_q(f, eps, eta), float(np.mean(1.0 + f.h(eps / eta))), INITIAL_BRACKET)

    def H(eta):
        return float(np.mean(f.h(eps / eta))) + 1.0

    root, br = _solve(H, 1e-13)
    return EtaSolution(root, _sample_q(f, eps, root), H(root), br)


def _sample_q(f: QuasiLikelihood, eps: np.ndarray, eta: float) -> float:
    return float(-np.log(eta) + np.mean(f.log_density(eps / eta)))


def sample_q(f: QuasiLikelihood, residuals, eta: float) -> tuple[float, float]:
    """Sample Q(eta) and its derivative -mean(1 + h(eps/eta)) / eta."""
    eps = _check_residuals(residuals)
    return _sample_q(f, eps, eta), -float(np.mean(1.0 + f.h(eps / eta))) / eta


def q_profile(f: QuasiLikelihood, source, eta_grid) -> np.ndarray:
    """Q(eta) on a grid; ``source`` is an InnovationDistribution or a residual sample."""
    grid = np.asarray(eta_grid, dtype=float)
    if isinstance(source, InnovationDistribution):
        return np.array([population_q(f, source, e) for e in grid])
    eps = _check_residuals(source)
    return np.array([_sample_q(f, eps, e) for e in grid])


def h_profile(f: QuasiLikelihood, source, eta_grid) -> np.ndarray:
    """H(eta) = E(1 + h(eps/eta)) on a grid; nondecreasing in eta."""
    grid = np.asarray(eta_grid, dtype=float)
    if isinstance(source, InnovationDistribution):
        return np.array([population_h(f, source, e) for e in grid])
    eps = _check_residuals(source)
    return np.array([float(np.mean(1.0 + f.h(eps / e))) for e in grid])


def eta_table(likelihoods, innovations) -> np.ndarray:
    """eta_f for every (likelihood row, innovation column) pair."""
    out = np.empty((len(likelihoods), len(innovations)))
    for i, f in enumerate(likelihoods):
        for j, g in enumerate(innovations):
            out[i, j] = eta_population(f, g).eta
    return out
