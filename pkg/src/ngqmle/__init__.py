"""Two-step non-Gaussian quasi-maximum-likelihood estimation for GARCH models."""

from ngqmle.likelihoods import InnovationDistribution, MomentFunctionals, QuasiLikelihood
from ngqmle.volatility import ClassicGarchParams, GarchOrder, GarchParams

__version__ = "0.1.0"

__all__ = [
    "ClassicGarchParams",
    "GarchOrder",
    "GarchParams",
    "InnovationDistribution",
    "MomentFunctionals",
    "QuasiLikelihood",
]
