"""GARCH(p, q) volatility recursion in the scale-separated parameterization.

The model is ``x_t = sigma * v_t * eps_t`` with

    v_t^2 = 1 + sum_i a_i x_{t-i}^2 + sum_j b_j v_{t-j}^2,

so ``sigma`` carries the volatility scale and ``gamma = (a, b)`` the dynamics.
The classical form ``sigma_t^2 = c + sum a~_i x^2 + sum b~_j sigma^2`` maps
over via ``c = sigma^2``, ``a~_i = sigma^2 a_i``, ``b~_j = b_j``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from ngqmle import _kernels

if TYPE_CHECKING:
    from ngqmle.likelihoods import InnovationDistribution

B_SUM_MAX = 1.0 - 1e-6


class InvalidParameterError(ValueError):
    pass


@dataclass(frozen=True)
class GarchOrder:
    p: int
    q: int

    def __post_init__(self):
        if self.p < 0 or self.q < 0 or self.p + self.q < 1:
            raise InvalidParameterError(f"invalid GARCH order ({self.p}, {self.q})")

    @classmethod
    def parse(cls, text: str) -> GarchOrder:
        p, q = (int(s) for s in text.split(","))
        return cls(p, q)

    @property
    def n_params(self) -> int:
        return 1 + self.p + self.q


@dataclass(frozen=True, eq=False)
class GarchParams:
    """theta = (sigma, a_1..a_p, b_1..b_q)."""

    sigma: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", float(self.sigma))
        vals = np.concatenate([[self.sigma], a, b])
        if not np.all(np.isfinite(vals)):
            raise InvalidParameterError("non-finite GARCH parameter")
        if self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if np.any(a < 0) or np.any(b < 0):
            raise InvalidParameterError("ARCH/GARCH coefficients must be nonnegative")
        if b.sum() > B_SUM_MAX:
            raise InvalidParameterError(f"sum of b must not exceed {B_SUM_MAX}, got {b.sum()}")

    @property
    def order(self) -> GarchOrder:
        return GarchOrder(self.a.size, self.b.size)

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.sigma], self.a, self.b])

    @classmethod
    def from_vector(cls, theta, order: GarchOrder) -> GarchParams:
        theta = np.asarray(theta, dtype=float)
        return cls(theta[0], theta[1 : 1 + order.p], theta[1 + order.p :])

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> GarchParams:
        return cls(d["sigma"], d.get("a", []), d.get("b", []))

    def __eq__(self, other):
        if not isinstance(other, GarchParams):
            return NotImplemented
        return (
            self.sigma == other.sigma
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    def __repr__(self):
        return f"GarchParams(sigma={self.sigma!r}, a={self.a.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True)
class ClassicGarchParams:
    c: float
    a_tilde: np.ndarray
    b_tilde: np.ndarray

    def to_dict(self) -> dict:
        return {"c": self.c, "a_tilde": list(map(float, self.a_tilde)), "b_tilde": list(map(float, self.b_tilde))}


def to_classic(params: GarchParams) -> ClassicGarchParams:
    s2 = params.sigma**2
    return ClassicGarchParams(s2, s2 * params.a, params.b.copy())


def from_classic(classic: ClassicGarchParams) -> GarchParams:
    if classic.c <= 0:
        raise InvalidParameterError("c must be positive")
    return GarchParams(np.sqrt(classic.c), np.asarray(classic.a_tilde) / classic.c, classic.b_tilde)


def covariance_stationary(params: GarchParams) -> tuple[bool, float]:
    """Check sigma^2 sum(a) + sum(b) < 1; returns (flag, margin)."""
    margin = 1.0 - (params.sigma**2 * params.a.sum() + params.b.sum())
    return margin > 0, margin


@dataclass(frozen=True)
class Presample:
    """Values of v^2 and x^2 used for t <= 0."""

    v2: float
    x2: float


def default_presample(params: GarchParams, returns: np.ndarray) -> Presample:
    """Stationary mean of v^2 when it exists, otherwise the sample variance scaled by sigma^2."""
    denom = 1.0 - params.sigma**2 * params.a.sum() - params.b.sum()
    if denom > 1e-6:
        v2 = 1.0 / denom
    else:
        v2 = max(float(np.var(returns)) / params.sigma**2, 1.0)
    return Presample(v2, params.sigma**2 * v2)


# persistence used by the moment-matched starting point (classical a~ + b~)
START_A_TILDE = 0.05
START_B = 0.8


def data_presample(returns: np.ndarray) -> Presample:
    """Parameter-free presample used during estimation.

    Equals the stationary convention evaluated at the moment-matched starting
    point, so it depends on the data only and rescales with it.
    """
    s2 = float(np.mean(np.asarray(returns) ** 2))
    return Presample(1.0 / (1.0 - START_A_TILDE - START_B), s2)


@dataclass(frozen=True)
class VolatilityPath:
    v: np.ndarray
    grad: np.ndarray  # d v_t / d gamma, shape (T, p+q)
    presample_value: float

    @property
    def v2(self) -> np.ndarray:
        return self.v**2


def validate_returns(returns) -> np.ndarray:
    x = np.ascontiguousarray(returns, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty return series")
    if not np.all(np.isfinite(x)):
        raise ValueError("return series contains non-finite values")
    return x


def filter(params: GarchParams, returns, presample: Presample | None = None) -> VolatilityPath:
    """Run the volatility recursion and its gamma-gradient recursion.

    Presample derivatives are zero: ``presample`` is a constant of the
    recursion. When omitted, the stationary-mean convention of
    :func:`default_presample` is used.
    """
    x = validate_returns(returns)
    order = params.order
    if x.size < order.p + order.q + 1:
        raise ValueError(f"need at least {order.p + order.q + 1} observations, got {x.size}")
    if presample is None:
        presample = default_presample(params, x)
    v2, dv2 = _kernels.garch_filter(x, params.a, params.b, presample.v2, presample.x2)
    v = np.sqrt(v2)
    return VolatilityPath(v, dv2 / (2.0 * v[:, None]), presample.v2)


def simulate(
    params: GarchParams,
    innov: InnovationDistribution,
    T: int,
    burn_in: int = 500,
    seed: int | np.random.Generator | None = None,
) -> np.ndarray:
    """Draw a GARCH path of length ``T`` after discarding ``burn_in`` values."""
    if T < 1 or burn_in < 0:
        raise ValueError("T must be >= 1 and burn_in >= 0")
    ok, _ = covariance_stationary(params)
    if not ok:
        warnings.warn("simulating a GARCH process that is not covariance stationary", stacklevel=2)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = T + burn_in
    eps = innov.sample(n, rng)
    return _simulate_path(params, eps)[burn_in:]


def _simulate_path(params: GarchParams, eps: np.ndarray) -> np.ndarray:
    pre = default_presample(params, np.ones(1))
    return _kernels.garch_simulate(eps, params.sigma, params.a, params.b, pre.v2, pre.x2)
