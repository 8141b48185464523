"""Multi-population sparse Bayesian factor model with hierarchical stick-breaking shrinkage."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    HIFMError,
    IntegrityError,
    NumericalError,
    ParameterError,
    UndefinedMetricError,
    ValidationError,
)
from .distributions import RngHandle  # noqa: E402
from .model import ColumnSpec, Dataset, Hyperparameters, PosteriorChain, default_k_star  # noqa: E402
from .gibbs import run_chain  # noqa: E402
from .regression import coefficient_draws, coefficients_from_draw, count_active_factors, predict  # noqa: E402

__all__ = [
    "HIFMError", "IntegrityError", "NumericalError", "ParameterError", "UndefinedMetricError",
    "ValidationError", "RngHandle", "ColumnSpec", "Dataset", "Hyperparameters", "PosteriorChain",
    "default_k_star", "run_chain", "coefficient_draws", "coefficients_from_draw",
    "count_active_factors", "predict",
]
