"""Data-driven choice of the quasi-likelihood and aggregation with the Gaussian QMLE.

The selected likelihood minimizes the sample analogue of
A(f, g) = E h1^2 / (E h2)^2 over a grid of Student t and generalized
Gaussian candidates, with g replaced by the Gaussian-QMLE residuals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ngqmle import asymptotics as asy
from ngqmle.estimators import FitOptions, StageError, TwoStepFit, fit_gaussian, fit_two_step
from ngqmle.eta import eta_empirical
from ngqmle.likelihoods import QuasiLikelihood, empirical_moment_functionals
from ngqmle.volatility import B_SUM_MAX, GarchOrder, GarchParams

log = logging.getLogger(__name__)

DEFAULT_T_DOFS = (2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0, 11.0, 15.0, 20.0)
DEFAULT_GG_SHAPES = (0.4, 0.6, 0.8, 1.0)
W_STAR_RANGE = (-1.0, 2.0)


class SelectionError(RuntimeError):
    pass


class AggregationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class CandidateGrid:
    t_dofs: tuple = DEFAULT_T_DOFS
    gg_shapes: tuple = DEFAULT_GG_SHAPES
    include_gaussian: bool = True
    allow_wide_gg: bool = False  # permit generalized Gaussian shapes above 1

    def __post_init__(self):
        object.__setattr__(self, "t_dofs", tuple(float(v) for v in self.t_dofs))
        object.__setattr__(self, "gg_shapes", tuple(float(v) for v in self.gg_shapes))
        if not (self.t_dofs or self.gg_shapes or self.include_gaussian):
            raise ValueError("candidate grid is empty")
        if any(not v > 2 for v in self.t_dofs):
            raise ValueError("Student t degrees of freedom must exceed 2")
        if any(not v > 0 for v in self.gg_shapes):
            raise ValueError("generalized Gaussian shapes must be positive")
        if not self.allow_wide_gg and any(v > 1 for v in self.gg_shapes):
            raise ValueError("generalized Gaussian shapes above 1 need allow_wide_gg=True")

    @classmethod
    def wide(cls) -> CandidateGrid:
        """t from 20 to 2.5 and gg from 4 to 0.4."""
        return cls(DEFAULT_T_DOFS, (0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0, 4.0), True, True)

    def candidates(self) -> list[QuasiLikelihood]:
        out = [QuasiLikelihood.student_t(v) for v in self.t_dofs]
        out += [QuasiLikelihood.gen_gaussian(v) for v in self.gg_shapes]
        if self.include_gaussian:
            out.append(QuasiLikelihood.gaussian())
        # unique, lightest tails first
        return sorted(set(out), key=lambda f: f.tail_key())

    def to_dict(self) -> dict:
        return {
            "t_dofs": list(self.t_dofs),
            "gg_shapes": list(self.gg_shapes),
            "include_gaussian": self.include_gaussian,
            "allow_wide_gg": self.allow_wide_gg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CandidateGrid:
        return cls(
            tuple(d.get("t_dofs", DEFAULT_T_DOFS)),
            tuple(d.get("gg_shapes", DEFAULT_GG_SHAPES)),
            bool(d.get("include_gaussian", True)),
            bool(d.get("allow_wide_gg", False)),
        )


@dataclass(frozen=True)
class CandidateScore:
    likelihood: QuasiLikelihood
    eta: float | None
    a_value: float | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"likelihood": self.likelihood.label, "eta": self.eta, "A": self.a_value, "error": self.error}


@dataclass(frozen=True)
class LikelihoodChoice:
    chosen: QuasiLikelihood
    table: tuple[CandidateScore, ...]

    def to_dict(self) -> dict:
        return {"chosen": self.chosen.label, "table": [c.to_dict() for c in self.table]}


def _score(f: QuasiLikelihood, eps: np.ndarray) -> CandidateScore:
    try:
        eta = eta_empirical(f, eps).eta
        fn = empirical_moment_functionals(f, eps, eta)
        a = fn.a_value
        if not np.isfinite(a):
            return CandidateScore(f, eta, None, "non-finite A")
        return CandidateScore(f, eta, float(a))
    except (ValueError, ArithmeticError) as exc:
        return CandidateScore(f, None, None, str(exc))


def choose_likelihood(residuals, grid: CandidateGrid | None = None, rtol_tie: float = 1e-12) -> LikelihoodChoice:
    """Candidate with the smallest sample A; near-ties go to the lighter-tailed candidate."""
    grid = grid or CandidateGrid()
    # sorting makes every sample mean independent of the residual order
    eps = np.sort(np.asarray(residuals, dtype=float).ravel())
    table = tuple(_score(f, eps) for f in grid.candidates())
    ok = [c for c in table if c.a_value is not None]
    if not ok:
        raise SelectionError("eta estimation failed for every candidate: " + "; ".join(c.error or "" for c in table))
    best = min(c.a_value for c in ok)
    # table is ordered lightest first, so the first near-minimizer wins ties
    chosen = next(c for c in ok if c.a_value <= best * (1 + rtol_tie) + 1e-300)
    return LikelihoodChoice(chosen.likelihood, table)


@dataclass
class FourStepFit:
    fit: TwoStepFit
    choice: LikelihoodChoice

    @property
    def params(self) -> GarchParams:
        return self.fit.params

    @property
    def likelihood(self) -> QuasiLikelihood:
        return self.choice.chosen


def four_step_fit(
    returns, order: GarchOrder, grid: CandidateGrid | None = None, opts: FitOptions | None = None,
    *, with_covariance: bool = True,
) -> FourStepFit:
    """Gaussian QMLE, likelihood choice on its residuals, eta-hat, then the scaled second step."""
    opts = opts or FitOptions()
    try:
        g_fit = fit_gaussian(returns, order, opts)
    except Exception as exc:
        raise StageError("gaussian", str(exc)) from exc
    try:
        choice = choose_likelihood(g_fit.residuals, grid)
    except SelectionError as exc:
        raise StageError("select", str(exc)) from exc
    fit = fit_two_step(returns, order, choice.chosen, opts, gaussian_fit=g_fit, with_covariance=with_covariance)
    fit.notes.append(f"selected {choice.chosen.label}")
    return FourStepFit(fit, choice)


@dataclass
class AggregationResult:
    w_star: float
    params: GarchParams
    sigma_star_diag: np.ndarray
    weights: np.ndarray  # per-coordinate optimal weights
    w_star_raw: float
    clamped: bool = False
    notes: list[str] = field(default_factory=list)
    covariance: asy.CovarianceBlocks | None = None

    def to_dict(self) -> dict:
        return {
            "w_star": self.w_star,
            "w_star_unclamped": self.w_star_raw,
            "clamped": self.clamped,
            "per_coordinate_weights": self.weights.tolist(),
            "params": self.params.to_dict(),
            "sigma_star_diag": self.sigma_star_diag.tolist(),
            "notes": list(self.notes),
        }


def aggregation_weight(f: QuasiLikelihood, residuals, eta: float) -> float:
    """w* = E[k_G (k_G + k_2)] / E(k_G + k_2)^2 with k_G = (1 - e^2)/2, k_2 = h1 / E h2."""
    eps = np.asarray(residuals, dtype=float)
    h1 = 1.0 + f.h(eps / eta)
    kg = (1.0 - eps**2) / 2.0
    k2 = h1 / np.mean(f.x_h_prime(eps / eta))
    s = kg + k2
    den = float(np.mean(s**2))
    if den < 1e-12:
        raise AggregationError("E(k_G + k_2)^2 vanishes; the two estimators coincide")
    return float(np.mean(kg * s)) / den


def per_coordinate_weights(cov: asy.CovarianceBlocks) -> np.ndarray:
    sg, s2, xi = np.diag(cov.sigma_G), np.diag(cov.sigma_2), np.diag(cov.xi)
    return (sg - xi) / (s2 + sg - 2 * xi)


def aggregated_variances(cov: asy.CovarianceBlocks) -> np.ndarray:
    sg, s2, xi = np.diag(cov.sigma_G), np.diag(cov.sigma_2), np.diag(cov.xi)
    return (s2 * sg - xi**2) / (s2 + sg - 2 * xi)


def _combine(w: float, theta_2: GarchParams, theta_g: GarchParams) -> tuple[GarchParams, list[str]]:
    vec = w * theta_2.to_vector() + (1 - w) * theta_g.to_vector()
    order = theta_2.order
    notes = []
    vec[1:] = np.clip(vec[1:], 0.0, None)
    b = vec[1 + order.p :]
    if b.sum() > B_SUM_MAX:
        vec[1 + order.p :] = b * B_SUM_MAX / b.sum()
        notes.append("aggregated b rescaled into the admissible region")
    if vec[0] <= 0:
        raise AggregationError("aggregated sigma is not positive")
    return GarchParams.from_vector(vec, order), notes


def aggregate(two_step: TwoStepFit, returns) -> AggregationResult:
    """Common-weight combination of the two-step and Gaussian estimates."""
    f = two_step.likelihood
    theta_2, theta_g = two_step.non_gaussian.params, two_step.gaussian.params
    if f.is_gaussian:
        # both estimators solve the same equations; any weight gives the same estimate
        n = 1 + theta_2.a.size + theta_2.b.size
        diag = np.full(n, np.nan)
        if two_step.covariance is not None:
            diag = np.diag(two_step.covariance.sigma_G).copy()
        params, notes = _combine(0.5, theta_2, theta_g)
        return AggregationResult(
            0.5, params, diag, np.full(n, 0.5), 0.5, False, ["gaussian likelihood: estimators coincide"] + notes,
            two_step.covariance,
        )
    eps = two_step.non_gaussian.residuals
    eta = two_step.eta_hat.eta
    w_raw = aggregation_weight(f, eps, eta)
    lo, hi = W_STAR_RANGE
    w = float(np.clip(w_raw, lo, hi))
    notes = []
    if w != w_raw:
        log.info("w* = %.4g clamped to %.4g", w_raw, w)
        notes.append(f"w* clamped from {w_raw:.6g}")
    fn = empirical_moment_functionals(f, eps, eta)
    stats = two_step.k_stats if two_step.k_stats is not None else asy.k_stats(two_step.non_gaussian, returns)
    cov = asy.covariance_blocks(stats, fn, theta_2.sigma, eta)
    params, more = _combine(w, theta_2, theta_g)
    return AggregationResult(
        w, params, aggregated_variances(cov), per_coordinate_weights(cov), w_raw, w != w_raw, notes + more, cov
    )
