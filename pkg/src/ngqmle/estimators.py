"""Gaussian QMLE, two-step non-Gaussian QMLE, the fixed-eta (oracle) fit and the MLE.

All objectives are the mean per-observation quasi log-likelihood

    L(theta) = mean_t[ -log(sigma v_t) + log f(x_t / (eta sigma v_t)) ],

maximized over (log sigma, a, b) with box bounds a >= 0, 0 <= b_j and
sum(b) <= 1 - 1e-6. L-BFGS-B does the bulk of the work; a projected Newton
polish on a finite-difference Hessian of the analytic gradient brings the
projected gradient below ``gradient_tolerance``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from ngqmle import _kernels
from ngqmle import asymptotics as asy
from ngqmle.eta import EtaSolution, eta_empirical
from ngqmle.likelihoods import MomentFunctionals, QuasiLikelihood, empirical_moment_functionals
from ngqmle.volatility import (
    B_SUM_MAX,
    START_A_TILDE,
    START_B,
    GarchOrder,
    GarchParams,
    Presample,
    data_presample,
    filter as vol_filter,
    validate_returns,
)

log = logging.getLogger(__name__)

_PENALTY = 1e4


class StageError(RuntimeError):
    """A step of a multi-stage fit failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    initial_params: GarchParams | None = None
    multistart: int = 3

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")


@dataclass
class FitResult:
    params: GarchParams
    loglik: float
    gradient_norm: float
    converged: bool
    iterations: int
    residuals: np.ndarray
    presample: Presample
    eta: float = 1.0
    density: str = "gaussian"
    boundary: bool = False
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "gradient_norm": self.gradient_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "eta": self.eta,
            "density": self.density,
            "boundary": self.boundary,
            "message": self.message,
        }


@dataclass
class TwoStepFit:
    gaussian: FitResult
    eta_hat: EtaSolution
    non_gaussian: FitResult
    likelihood: QuasiLikelihood
    covariance: asy.CovarianceBlocks | None = None
    functionals: MomentFunctionals | None = None
    k_stats: asy.KMatrixStats | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def params(self) -> GarchParams:
        return self.non_gaussian.params

    @property
    def converged(self) -> bool:
        return self.gaussian.converged and self.non_gaussian.converged

    def standard_errors(self, n_obs: int | None = None) -> dict | None:
        if self.covariance is None:
            return None
        T = n_obs or self.gaussian.residuals.size
        return self.covariance.standard_errors(T)


# ----------------------------------------------------------------------------
# objective in transformed coordinates z = (log sigma, a, b)


def _to_z(params: GarchParams) -> np.ndarray:
    return np.concatenate([[np.log(params.sigma)], params.a, params.b])


def _from_z(z: np.ndarray, order: GarchOrder) -> tuple[float, np.ndarray, np.ndarray]:
    return float(np.exp(z[0])), z[1 : 1 + order.p], z[1 + order.p :]


LOG_SIGMA_BOUND = 100.0  # keeps trial steps of the line search finite


def _bounds(order: GarchOrder) -> list[tuple]:
    return [(-LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)] + [(0.0, None)] * order.p + [(0.0, B_SUM_MAX)] * order.q


class _Objective:
    def __init__(self, x, order, density, eta, presample):
        self.x = x
        self.order = order
        self.code, self.pars = density.kernel_spec
        self.eta = float(eta)
        self.presample = presample
        self.nfev = 0

    def loglik(self, z):
        sigma, a, b = _from_z(z, self.order)
        a = np.maximum(a, 0.0)
        b = np.maximum(b, 0.0)
        ll, g = _kernels.mean_loglik(
            self.x, sigma, a, b, self.presample.v2, self.presample.x2, self.eta, self.code, self.pars
        )
        g = g.copy()
        g[0] *= sigma
        return ll, g

    def __call__(self, z):
        # negative mean loglik and gradient, with a penalty on sum(b) > B_SUM_MAX
        self.nfev += 1
        ll, g = self.loglik(z)
        val, grad = -ll, -g
        if self.order.q > 1:
            excess = z[1 + self.order.p :].sum() - B_SUM_MAX
            if excess > 0:
                val += _PENALTY * excess**2
                grad[1 + self.order.p :] += 2 * _PENALTY * excess
        if not np.isfinite(val):
            return 1e10, np.zeros_like(z)
        return val, grad


def _projected_gradient(z, grad, bounds, tol_bound=1e-12):
    pg = grad.copy()
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and z[i] <= lo + tol_bound and grad[i] > 0:
            pg[i] = 0.0
        if hi is not None and z[i] >= hi - tol_bound and grad[i] < 0:
            pg[i] = 0.0
    return pg


def _clip(z, bounds):
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    return np.clip(z, lo, hi)


def _newton_polish(obj, z, bounds, tol, max_steps=30):
    """Projected Newton iterations on the free coordinates."""
    val, grad = obj(z)
    steps = 0
    for steps in range(1, max_steps + 1):
        pg = _projected_gradient(z, grad, bounds)
        if np.linalg.norm(pg) < tol:
            return z, val, grad, steps - 1
        free = np.flatnonzero(pg != 0.0)
        n = free.size
        H = np.empty((n, n))
        for col, i in enumerate(free):
            hstep = 1e-5 * max(1.0, abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += hstep
            zm[i] -= hstep
            H[:, col] = (obj(zp)[1][free] - obj(zm)[1][free]) / (2 * hstep)
        H = 0.5 * (H + H.T)
        try:
            w = np.linalg.eigvalsh(H)
            if w.min() <= 0:
                H = H + (abs(w.min()) + 1e-8 * max(1.0, w.max())) * np.eye(n)
            d = -np.linalg.solve(H, grad[free])
        except np.linalg.LinAlgError:
            d = -grad[free]
        t = 1.0
        improved = False
        pg_norm = np.linalg.norm(pg)
        for _ in range(40):
            zn = z.copy()
            zn[free] += t * d
            zn = _clip(zn, bounds)
            vn, gn = obj(zn)
            if vn <= val + 1e-4 * t * float(grad[free] @ d):
                improved = True
                break
            # near the optimum value changes fall below rounding; accept on gradient decrease
            if vn <= val + 1e-13 * max(1.0, abs(val)) and np.linalg.norm(
                _projected_gradient(zn, gn, bounds)
            ) < 0.5 * pg_norm:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        z, val, grad = zn, vn, gn
    return z, val, grad, steps


def _moment_matched_start(x, order: GarchOrder, a_t: float = START_A_TILDE, b_t: float = START_B) -> GarchParams:
    """Start whose stationary variance equals mean(x^2), with persistence a~ + b~ = a_t + b_t."""
    s2 = float(np.mean(x**2))
    a_t = a_t if order.p else 0.0
    b_t = b_t if order.q else 0.0
    c = s2 * (1.0 - a_t - b_t)
    a = np.full(order.p, a_t / order.p / c) if order.p else np.zeros(0)
    b = np.full(order.q, b_t / order.q) if order.q else np.zeros(0)
    return GarchParams(np.sqrt(c), a, b)


def _perturbed_start(params: GarchParams) -> GarchParams:
    b = params.b * 0.5 + 0.1 * (params.b.size > 0)
    if b.sum() > 0.9:
        b = b * 0.9 / b.sum()
    return GarchParams(params.sigma * 1.3, params.a * 0.5 + 0.05 / params.sigma**2, b)


def _check_input(returns, order: GarchOrder) -> np.ndarray:
    x = validate_returns(returns)
    if x.size <= 10 * order.n_params:
        raise ValueError(f"need more than {10 * order.n_params} observations for order {order}")
    if not np.var(x) > 0:
        raise ValueError("returns have zero variance")
    return x


def _run_single(obj: _Objective, start: GarchParams, order, opts: FitOptions):
    bounds = _bounds(order)
    z0 = _clip(_to_z(start), bounds)
    res = optimize.minimize(
        obj,
        z0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": opts.max_iterations, "gtol": opts.gradient_tolerance * 0.1, "ftol": 1e-15, "maxcor": 20},
    )
    z, val, grad, nsteps = _newton_polish(obj, res.x, bounds, opts.gradient_tolerance)
    gnorm = float(np.linalg.norm(_projected_gradient(z, grad, bounds)))
    return z, -val, gnorm, int(res.nit) + nsteps, res.message


def _fit(x, order: GarchOrder, density, eta: float, opts: FitOptions, starts: list[GarchParams]) -> FitResult:
    presample = data_presample(x)
    obj = _Objective(x, order, density, eta, presample)
    best = None
    seen = []
    for start in starts[: opts.multistart]:
        if any(start == s for s in seen):
            continue
        seen.append(start)
        z, ll, gnorm, nit, msg = _run_single(obj, start, order, opts)
        conv = gnorm < opts.gradient_tolerance
        key = (conv, ll)
        if best is None or key > best[0]:
            best = (key, z, ll, gnorm, nit, msg)
    (conv, _), z, ll, gnorm, nit, msg = best
    sigma, a, b = _from_z(z, order)
    b = np.clip(b, 0.0, None)
    if b.sum() > B_SUM_MAX:
        b = b * B_SUM_MAX / b.sum()
    params = GarchParams(sigma, np.clip(a, 0.0, None), b)
    path = vol_filter(params, x, presample)
    resid = x / (params.sigma * path.v)
    boundary = bool(np.any(params.gamma <= 1e-10))
    label = getattr(density, "label", str(density))
    if not conv:
        log.warning("fit with %s did not converge (gradient norm %.3g)", label, gnorm)
    return FitResult(
        params, ll, gnorm, bool(conv), nit, resid, presample, float(eta), label, boundary, str(msg)
    )


def _starts(x, order, opts: FitOptions, warm: GarchParams | None = None) -> list[GarchParams]:
    # high- and low-persistence starts: the Gaussian quasi-likelihood can have one local maximum near each
    mm = _moment_matched_start(x, order)
    low = _moment_matched_start(x, order, 0.2, 0.1)
    first = opts.initial_params or warm or mm
    return [first, low if first is mm else mm, low, _perturbed_start(first)]


def fit_gaussian(returns, order: GarchOrder, opts: FitOptions | None = None) -> FitResult:
    """Gaussian QMLE (the first step)."""
    opts = opts or FitOptions()
    x = _check_input(returns, order)
    return _fit(x, order, QuasiLikelihood.gaussian(), 1.0, opts, _starts(x, order, opts))


def fit_oracle(
    returns,
    order: GarchOrder,
    f,
    eta_known: float,
    opts: FitOptions | None = None,
    warm_start: GarchParams | None = None,
) -> FitResult:
    """Non-Gaussian QMLE with a given scale correction ``eta_known``.

    With ``eta_known = 1`` this is the unscaled non-Gaussian QMLE; with
    ``f`` equal to the true innovation density it is the MLE.
    """
    opts = opts or FitOptions()
    if not eta_known > 0:
        raise ValueError("eta must be positive")
    x = _check_input(returns, order)
    return _fit(x, order, f, eta_known, opts, _starts(x, order, opts, warm_start))


def fit_mle(returns, order: GarchOrder, g, opts: FitOptions | None = None, warm_start=None) -> FitResult:
    """Maximum likelihood when the innovation density ``g`` is known."""
    return fit_oracle(returns, order, g, 1.0, opts, warm_start)


def fit_two_step(
    returns,
    order: GarchOrder,
    f: QuasiLikelihood,
    opts: FitOptions | None = None,
    *,
    gaussian_fit: FitResult | None = None,
    eta_hat: EtaSolution | None = None,
    with_covariance: bool = True,
) -> TwoStepFit:
    """Gaussian QMLE, eta from its residuals, then the eta-scaled non-Gaussian QMLE."""
    opts = opts or FitOptions()
    x = _check_input(returns, order)
    if gaussian_fit is None:
        try:
            gaussian_fit = fit_gaussian(x, order, opts)
        except Exception as exc:
            raise StageError("gaussian", str(exc)) from exc
    if eta_hat is None:
        try:
            eta_hat = eta_empirical(f, gaussian_fit.residuals)
        except Exception as exc:
            raise StageError("eta", str(exc)) from exc
    try:
        second_opts = replace(opts, initial_params=None)
        ng = _fit(x, order, f, eta_hat.eta, second_opts, _starts(x, order, second_opts, gaussian_fit.params))
    except Exception as exc:
        raise StageError("second_step", str(exc)) from exc
    out = TwoStepFit(gaussian_fit, eta_hat, ng, f)
    if with_covariance:
        attach_covariance(out, x)
    return out


def attach_covariance(fit: TwoStepFit, returns) -> TwoStepFit:
    """Plug-in covariance blocks from the first-step residuals and the second-step fit."""
    try:
        stats = asy.k_stats(fit.non_gaussian, returns)
    except asy.SingularDesignError as exc:
        fit.notes.append(f"covariance unavailable: {exc}")
        return fit
    func = empirical_moment_functionals(fit.likelihood, fit.gaussian.residuals, fit.eta_hat.eta)
    fit.k_stats = stats
    fit.functionals = func
    fit.covariance = asy.covariance_blocks(stats, func, fit.non_gaussian.params.sigma, fit.eta_hat.eta)
    if fit.non_gaussian.boundary or fit.gaussian.boundary:
        fit.notes.append("boundary estimate: standard errors unreliable")
    return fit


@dataclass
class Scores:
    s1: np.ndarray  # (T, 1+p+q) at the Gaussian fit
    s2: np.ndarray  # (T,) eta score at the Gaussian fit
    s3: np.ndarray  # (T, 1+p+q) at the second-step fit

    def means(self) -> tuple[np.ndarray, float, np.ndarray]:
        return self.s1.mean(axis=0), float(self.s2.mean()), self.s3.mean(axis=0)


def _k_matrix(params: GarchParams, x, presample) -> tuple[np.ndarray, np.ndarray]:
    path = vol_filter(params, x, presample)
    k = np.empty((x.size, 1 + path.grad.shape[1]))
    k[:, 0] = 1.0 / params.sigma
    k[:, 1:] = path.grad / path.v[:, None]
    return k, path.v


def scores(returns, fit: TwoStepFit) -> Scores:
    """Per-observation score contributions of the three estimating equations."""
    x = validate_returns(returns)
    f, eta = fit.likelihood, fit.eta_hat.eta
    pg = fit.gaussian.params
    k1, v1 = _k_matrix(pg, x, fit.gaussian.presample)
    u1 = x / (pg.sigma * v1)
    s1 = k1 * (-1.0 + u1**2)[:, None]
    s2 = -(1.0 + f.h(u1 / eta)) / eta
    pn = fit.non_gaussian.params
    k3, v3 = _k_matrix(pn, x, fit.non_gaussian.presample)
    s3 = -k3 * (1.0 + f.h(x / (eta * pn.sigma * v3)))[:, None]
    return Scores(s1, s2, s3)


def loglik_at(returns, params: GarchParams, f, eta: float = 1.0, presample: Presample | None = None):
    """Mean quasi log-likelihood and its gradient in (sigma, a, b)."""
    x = validate_returns(returns)
    presample = presample or data_presample(x)
    code, pars = f.kernel_spec
    ll, g = _kernels.mean_loglik(x, params.sigma, params.a, params.b, presample.v2, presample.x2, eta, code, pars)
    return float(ll), g
