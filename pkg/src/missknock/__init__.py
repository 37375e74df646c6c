"""Model-X knockoffs for covariates with missing values."""

from .errors import MissknockError
from .models import (
    DiscreteModel,
    HmmModel,
    KnockoffPair,
    LatentFactorModel,
    MaskedSample,
    MissingnessSpec,
    MvnModel,
    ResponseModel,
)
from .pipelines import posterior_knockoffs, univariate_knockoffs
from .selection import lasso_knockoff_filter

__version__ = "0.1.0"

__all__ = [
    "MissknockError",
    "DiscreteModel",
    "HmmModel",
    "KnockoffPair",
    "LatentFactorModel",
    "MaskedSample",
    "MissingnessSpec",
    "MvnModel",
    "ResponseModel",
    "posterior_knockoffs",
    "univariate_knockoffs",
    "lasso_knockoff_filter",
]
