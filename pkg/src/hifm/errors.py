"""Exception hierarchy shared across the package."""


class HIFMError(Exception):
    """Base class for all package errors."""


class ParameterError(HIFMError, ValueError):
    """A distribution or model parameter is outside its admissible range."""


class ValidationError(HIFMError, ValueError):
    """Input data, schema or configuration failed validation."""


class IntegrityError(HIFMError):
    """A serialized artifact does not match its recorded checksum or layout."""


class UndefinedMetricError(HIFMError, ValueError):
    """A metric cannot be evaluated on the given labels (e.g. a single class)."""


class NumericalError(HIFMError, ArithmeticError):
    """A linear-algebra step failed (matrix not positive definite after jitter).

    Attributes
    ----------
    min_eigenvalue : float or None
        Smallest eigenvalue of the offending matrix, when available.
    block : str or None
        Name of the sampler block that failed.
    iteration : int or None
        Iteration index at which the failure occurred.
    """

    def __init__(self, message, min_eigenvalue=None, block=None, iteration=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.block = block
        self.iteration = iteration
