"""Quasi-likelihood families, innovation distributions and their expectations.

Every density here is standardized to mean 0 and variance 1. The quantity
that drives identification and all variance formulas is the h-function
``h(x) = x f'(x) / f(x)`` together with ``x h'(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ngqmle import _kernels

_ALIASES = {
    "gaussian": "gaussian",
    "normal": "gaussian",
    "student_t": "student_t",
    "t": "student_t",
    "generalized_gaussian": "generalized_gaussian",
    "gg": "generalized_gaussian",
    "ged": "generalized_gaussian",
    "skewed_t": "skewed_t",
    "skewt": "skewed_t",
    "transformed_stable": "transformed_stable",
    "stable": "transformed_stable",
}


class QuadratureError(ArithmeticError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


def _canonical(family: str) -> str:
    try:
        return _ALIASES[family.lower()]
    except KeyError:
        raise ValueError(f"unknown family {family!r}") from None


def _t_log_const(nu: float) -> float:
    return math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2) - 0.5 * math.log(math.pi * (nu - 2))


def gg_k(beta: float) -> float:
    """(Gamma(3/beta) / Gamma(1/beta))^(beta/2)."""
    return math.exp(0.5 * beta * (math.lgamma(3 / beta) - math.lgamma(1 / beta)))


def _gg_log_const(beta: float) -> float:
    k = gg_k(beta)
    return math.log(beta) + math.log(k) / beta - math.log(2.0) - math.lgamma(1 / beta)


def _hansen_constants(nu: float, lam: float) -> tuple[float, float, float]:
    c = math.exp(math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)) / math.sqrt(math.pi * (nu - 2))
    a = 4 * lam * c * (nu - 2) / (nu - 1)
    b = math.sqrt(1 + 3 * lam**2 - a**2)
    return a, b, c


def _kernel_pars(family: str, shape, skew=0.0) -> tuple[int, np.ndarray]:
    pars = np.zeros(_kernels.N_PARS)
    if family == "gaussian":
        return _kernels.GAUSSIAN, pars
    if family == "student_t":
        pars[0] = shape
        pars[1] = _t_log_const(shape)
        return _kernels.STUDENT_T, pars
    if family == "generalized_gaussian":
        pars[0] = shape
        pars[1] = _gg_log_const(shape)
        pars[2] = gg_k(shape)
        return _kernels.GEN_GAUSSIAN, pars
    if family == "skewed_t":
        a, b, c = _hansen_constants(shape, skew)
        pars[:] = [shape, math.log(b * c), 0.0, skew, a, b]
        return _kernels.SKEWED_T, pars
    raise ValueError(f"family {family!r} has no closed-form density")


class _DensityMixin:
    """Vectorized access to log f, h and x h' through the compiled kernels."""

    _code: int
    _pars: np.ndarray

    @property
    def kernel_spec(self) -> tuple[int, np.ndarray]:
        return self._code, self._pars

    def _apply(self, fn, x):
        arr = np.asarray(x, dtype=float)
        out = fn(np.ascontiguousarray(arr.ravel()), self._code, self._pars)
        if isinstance(out, tuple):
            return tuple(o.reshape(arr.shape) if arr.ndim else o[0] for o in out)
        return out.reshape(arr.shape) if arr.ndim else out[0]

    def log_density(self, x):
        return self._apply(_kernels.eval_logf_h, x)[0]

    def density(self, x):
        return np.exp(self.log_density(x))

    def h(self, x):
        return self._apply(_kernels.eval_logf_h, x)[1]

    def x_h_prime(self, x):
        return self._apply(_kernels.eval_xhprime, x)

    def h_prime(self, x):
        """Derivative of h. Defined as 0 at x = 0 (singular there for gg with shape < 1)."""
        x = np.asarray(x, dtype=float)
        xh = self.x_h_prime(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x == 0.0, 0.0, xh / np.where(x == 0.0, 1.0, x))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class QuasiLikelihood(_DensityMixin):
    """A standardized quasi-likelihood: gaussian, student_t (nu > 2) or generalized_gaussian (beta > 0)."""

    family: str
    shape: float | None = None

    def __post_init__(self):
        fam = _canonical(self.family)
        if fam not in ("gaussian", "student_t", "generalized_gaussian"):
            raise ValueError(f"{fam} is not a quasi-likelihood family")
        object.__setattr__(self, "family", fam)
        if fam == "gaussian":
            object.__setattr__(self, "shape", None)
        else:
            if self.shape is None:
                raise ValueError(f"{fam} requires a shape parameter")
            object.__setattr__(self, "shape", float(self.shape))
            if fam == "student_t" and not self.shape > 2:
                raise ValueError(f"student_t requires nu > 2, got {self.shape}")
            if fam == "generalized_gaussian" and not self.shape > 0:
                raise ValueError(f"generalized_gaussian requires beta > 0, got {self.shape}")
        code, pars = _kernel_pars(fam, self.shape)
        object.__setattr__(self, "_code", code)
        object.__setattr__(self, "_pars", pars)

    @classmethod
    def gaussian(cls) -> QuasiLikelihood:
        return cls("gaussian")

    @classmethod
    def student_t(cls, nu: float) -> QuasiLikelihood:
        return cls("student_t", nu)

    @classmethod
    def gen_gaussian(cls, beta: float) -> QuasiLikelihood:
        return cls("generalized_gaussian", beta)

    @property
    def is_gaussian(self) -> bool:
        return self.family == "gaussian"

    @property
    def label(self) -> str:
        if self.family == "gaussian":
            return "gaussian"
        prefix = "t" if self.family == "student_t" else "gg"
        return f"{prefix}{self.shape:g}"

    def tail_key(self) -> tuple:
        """Sort key, lightest tails first: gg/gaussian by decreasing shape, then t by decreasing dof."""
        if self.family == "gaussian":
            return (0, -2.0)
        if self.family == "generalized_gaussian":
            return (0, -self.shape)
        return (1, -self.shape)

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.shape is not None:
            d["shape"] = self.shape
        return d

    @classmethod
    def from_dict(cls, d: dict) -> QuasiLikelihood:
        return cls(d["family"], d.get("shape"))

    @classmethod
    def parse(cls, text: str) -> QuasiLikelihood:
        """Accept 'gaussian', 't:4', 'gg:1.0' or a JSON object."""
        text = text.strip()
        if text.startswith("{"):
            import json

            return cls.from_dict(json.loads(text))
        if ":" in text:
            fam, shape = text.split(":", 1)
            return cls(fam, float(shape))
        return cls(text)

    def __hash__(self):
        return hash((self.family, self.shape))

    def __eq__(self, other):
        if not isinstance(other, QuasiLikelihood):
            return NotImplemented
        return (self.family, self.shape) == (other.family, other.shape)


def stable_abs_moment(alpha: float, p: float) -> float:
    """E|X|^p for symmetric alpha-stable X with characteristic function exp(-|t|^alpha), p < alpha."""
    if not 0 < p < alpha:
        raise ValueError("need 0 < p < alpha")
    return (
        2**p
        * math.gamma((1 + p) / 2)
        * math.gamma(1 - p / alpha)
        / (math.sqrt(math.pi) * math.gamma(1 - p / 2))
    )


def sample_symmetric_stable(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Chambers-Mallows-Stuck draw of standard symmetric alpha-stable variates (alpha != 1)."""
    V = rng.uniform(-np.pi / 2, np.pi / 2, n)
    W = rng.exponential(1.0, n)
    return (
        np.sin(alpha * V)
        / np.cos(V) ** (1.0 / alpha)
        * (np.cos(V - alpha * V) / W) ** ((1.0 - alpha) / alpha)
    )


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class InnovationDistribution(_DensityMixin):
    """True innovation law with mean 0 and unit variance.

    ``shape`` is nu (student_t, skewed_t), beta (generalized_gaussian) or
    alpha (transformed_stable); ``skew`` is lambda for skewed_t, where a
    positive value makes the left tail heavier.
    """

    family: str
    shape: float | None = None
    skew: float = 0.0

    def __post_init__(self):
        fam = _canonical(self.family)
        object.__setattr__(self, "family", fam)
        shape = None if self.shape is None else float(self.shape)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "skew", float(self.skew))
        if fam == "gaussian":
            object.__setattr__(self, "shape", None)
        elif shape is None:
            raise ValueError(f"{fam} requires a shape parameter")
        if fam in ("student_t", "skewed_t") and not shape > 2:
            raise ValueError(f"{fam} requires nu > 2")
        if fam == "generalized_gaussian" and not shape > 0:
            raise ValueError("generalized_gaussian requires beta > 0")
        if fam == "skewed_t" and not abs(self.skew) < 1:
            raise ValueError("skewed_t requires |lambda| < 1")
        if fam == "transformed_stable":
            if not 1 < shape < 2:
                raise ValueError("transformed_stable requires 1 < alpha < 2")
            scale = math.sqrt(stable_abs_moment(shape, 2 * shape / 3))
            object.__setattr__(self, "_stable_scale", scale)
            object.__setattr__(self, "_code", -1)
            object.__setattr__(self, "_pars", np.zeros(_kernels.N_PARS))
        else:
            code, pars = _kernel_pars(fam, shape, self.skew)
            object.__setattr__(self, "_code", code)
            object.__setattr__(self, "_pars", pars)

    @property
    def has_density(self) -> bool:
        return self.family != "transformed_stable"

    @property
    def tail_index(self) -> float:
        """Supremum of the p with E|eps|^p finite."""
        if self.family in ("student_t", "skewed_t"):
            return self.shape
        if self.family == "transformed_stable":
            return 3.0  # |z|^(alpha/3) with z alpha-stable
        return math.inf

    @property
    def kernel_spec(self):
        if not self.has_density:
            raise ValueError("transformed_stable has no closed-form density")
        return self._code, self._pars

    def _apply(self, fn, x):
        if not self.has_density:
            raise ValueError("transformed_stable has no closed-form density")
        return super()._apply(fn, x)

    def quasi_likelihood(self) -> QuasiLikelihood | None:
        """The same density as a quasi-likelihood, when the family allows it."""
        if self.family in ("gaussian", "student_t", "generalized_gaussian"):
            return QuasiLikelihood(self.family, self.shape)
        return None

    @property
    def label(self) -> str:
        if self.family == "gaussian":
            return "gaussian"
        prefix = {"student_t": "t", "generalized_gaussian": "gg", "skewed_t": "skt", "transformed_stable": "stable"}
        tail = f",{self.skew:g}" if self.family == "skewed_t" else ""
        return f"{prefix[self.family]}{self.shape:g}{tail}"

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.shape is not None:
            d["shape"] = self.shape
        if self.family == "skewed_t":
            d["skew"] = self.skew
        return d

    @classmethod
    def from_dict(cls, d: dict) -> InnovationDistribution:
        return cls(d["family"], d.get("shape"), d.get("skew", 0.0))

    @classmethod
    def parse(cls, text: str) -> InnovationDistribution:
        """Accept 'gaussian', 't:5', 'gg:0.6', 'skewed_t:7,0.5', 'stable:1.5' or JSON."""
        text = text.strip()
        if text.startswith("{"):
            import json

            return cls.from_dict(json.loads(text))
        if ":" not in text:
            return cls(text)
        fam, rest = text.split(":", 1)
        vals = [float(v) for v in rest.split(",")]
        return cls(fam, vals[0], vals[1] if len(vals) > 1 else 0.0)

    def sample(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = _rng(seed)
        fam = self.family
        if fam == "gaussian":
            return rng.standard_normal(n)
        if fam == "student_t":
            nu = self.shape
            return rng.standard_t(nu, n) * math.sqrt((nu - 2) / nu)
        if fam == "generalized_gaussian":
            beta = self.shape
            y = rng.gamma(1.0 / beta, 1.0, n)
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return sign * (y / gg_k(beta)) ** (1.0 / beta)
        if fam == "skewed_t":
            nu, lam = self.shape, self.skew
            a, b, _ = _hansen_constants(nu, lam)
            tv = np.abs(rng.standard_t(nu, n)) * math.sqrt((nu - 2) / nu)
            left = rng.random(n) < (1 - lam) / 2
            u = np.where(left, -(1 - lam) * tv, (1 + lam) * tv)
            # Hansen draw is (u - a)/b; negate so that positive skew weights the left tail
            return -(u - a) / b
        alpha = self.shape
        z = sample_symmetric_stable(alpha, n, rng)
        return np.sign(z) * np.abs(z) ** (alpha / 3) / self._stable_scale

    def breakpoints(self) -> list[float]:
        """Points where the density is not smooth (integration splits there)."""
        if self.family == "skewed_t":
            a, b, _ = _hansen_constants(self.shape, self.skew)
            return sorted({0.0, a / b})
        return [0.0]

    def expect(self, func, *, rtol: float = 1e-11) -> float:
        """E_g func(eps) by quadrature; ``func`` must accept arrays."""
        return expect(self, func, rtol=rtol)


def expect(g: InnovationDistribution, func, *, rtol: float = 1e-11) -> float:
    """Integrate func against the density of g.

    Generalized Gaussian laws are integrated in the variable y = k |x|^beta
    (a Gamma(1/beta) variate) so the cusp and the stretched tail become
    benign; other families are split at their breakpoints and handed to
    double-exponential quadrature on each piece.
    """
    if not g.has_density:
        raise ValueError("quadrature needs a closed-form density")
    if g.family == "generalized_gaussian":
        beta = g.shape
        shape = 1.0 / beta
        k = gg_k(beta)
        lg = math.lgamma(shape)

        def integrand(y):
            x = (y / k) ** (1.0 / beta)
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.exp((shape - 1) * np.log(y) - y - lg)
            w = np.where(y > 0, w, 0.0)
            return 0.5 * (func(x) + func(-x)) * w

        pieces = [(0.0, shape), (shape, np.inf)]
    else:
        bps = g.breakpoints()
        edges = [-np.inf, *bps, np.inf]
        pieces = list(zip(edges[:-1], edges[1:]))

        def integrand(x):
            return func(x) * g.density(x)

    total = 0.0
    err = 0.0
    for lo, hi in pieces:
        res = integrate.tanhsinh(integrand, lo, hi, rtol=rtol, maxlevel=12)
        total += float(res.integral)
        err += float(res.error)
        if res.status != 0 and not (np.isfinite(res.integral) and res.error <= 1e-7 * max(1.0, abs(res.integral))):
            raise QuadratureError(
                f"quadrature did not converge on [{lo}, {hi}] for {g.label} (error {res.error:.3g})",
                achieved=float(res.error),
            )
    if err > 1e-7 * max(1.0, abs(total)):
        raise QuadratureError(f"quadrature error {err:.3g} too large for {g.label}", achieved=err)
    return total


@dataclass(frozen=True)
class MomentFunctionals:
    """Scalars entering every asymptotic variance.

    h1 = 1 + h(eps/eta), h2 = (eps/eta) h'(eps/eta).
    """

    e_h1_sq: float
    e_h2: float
    e_eps4: float  # E(eps^2 - 1)^2
    e_h1_eps: float  # E(h1 (eps^2 - 1))
    e_h1: float = 0.0
    fisher_gap: float | None = None  # E(h_g^2) - 1

    @property
    def a_value(self) -> float:
        return self.e_h1_sq / self.e_h2**2

    @property
    def mu(self) -> float:
        return self.e_eps4 / 4 - self.a_value

    def to_dict(self) -> dict:
        return {
            "e_h1_sq": self.e_h1_sq,
            "e_h2": self.e_h2,
            "e_eps4": self.e_eps4,
            "e_h1_eps": self.e_h1_eps,
            "e_h1": self.e_h1,
            "mu": self.mu,
            "a_value": self.a_value,
            "fisher_gap": self.fisher_gap,
        }


def moment_functionals(f: QuasiLikelihood, g: InnovationDistribution, eta: float) -> MomentFunctionals:
    """Population functionals by quadrature."""
    if eta <= 0:
        raise ValueError("eta must be positive")

    def h1(x):
        return 1.0 + f.h(x / eta)

    e_h1_sq = expect(g, lambda x: h1(x) ** 2)
    e_h2 = expect(g, lambda x: f.x_h_prime(x / eta))
    # skip quadrature of moments that do not exist
    growth = f.shape if f.family == "generalized_gaussian" else 0.0
    e_eps4 = expect(g, lambda x: (x * x - 1.0) ** 2) if g.tail_index > 4 else math.inf
    e_h1_eps = expect(g, lambda x: h1(x) * (x * x - 1.0)) if g.tail_index > 2 + growth else math.nan
    e_h1 = expect(g, h1)
    fisher = expect(g, lambda x: g.h(x) ** 2) - 1.0
    return MomentFunctionals(e_h1_sq, e_h2, e_eps4, e_h1_eps, e_h1, fisher)


def empirical_moment_functionals(f: QuasiLikelihood, residuals, eta: float) -> MomentFunctionals:
    """Sample analogues of :func:`moment_functionals` over a residual sample."""
    eps = np.asarray(residuals, dtype=float)
    u = eps / eta
    h1 = 1.0 + f.h(u)
    e2 = eps**2 - 1.0
    return MomentFunctionals(
        float(np.mean(h1**2)),
        float(np.mean(f.x_h_prime(u))),
        float(np.mean(e2**2)),
        float(np.mean(h1 * e2)),
        float(np.mean(h1)),
        None,
    )


def sample(g: InnovationDistribution, n: int, seed=None) -> np.ndarray:
    return g.sample(n, seed)


def log_density(f, x):
    return f.log_density(x)


def h(f, x):
    return f.h(x)


def h_prime(f, x):
    return f.h_prime(x)


__all__ = [
    "InnovationDistribution",
    "MomentFunctionals",
    "QuadratureError",
    "QuasiLikelihood",
    "empirical_moment_functionals",
    "expect",
    "gg_k",
    "moment_functionals",
    "sample_symmetric_stable",
    "stable_abs_moment",
]
