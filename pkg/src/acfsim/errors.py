"""Exception types shared across the package.

The split matters for the CLI exit-code contract: usage problems (bad flags,
bad config keys) exit 1, data problems (missing/mismatched/degenerate inputs)
exit 2, numerical failures (fit non-convergence) exit 3.
"""


class AcfsimError(Exception):
    """Base class for package errors."""


class ConfigError(AcfsimError, ValueError):
    """Malformed configuration: unknown keys, unparsable values."""


class DataError(AcfsimError, ValueError):
    """Problems with input data (grids, masks, volumes, series)."""


class InvalidGridError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class EmptyMaskError(DataError):
    pass


class InsufficientDataError(DataError):
    """Not enough voxels / frames / bins to run the requested estimate."""


class DegenerateDataError(DataError):
    """Inputs whose variance structure makes the estimate meaningless."""


class ZeroVarianceError(DegenerateDataError):
    """Paired differences with zero variance and nonzero mean (infinite t)."""


class SmoothnessUndefinedError(DegenerateDataError):
    """First-difference variance ratio leaves no axis with a defined width."""


class NumericalError(AcfsimError, RuntimeError):
    """Numerical failure in an otherwise well-posed problem."""


class FitFailureError(NumericalError):
    """ACF fit did not converge. Carries the best point found."""

    def __init__(self, message, best_params=None, objective=None):
        super().__init__(message)
        self.best_params = best_params
        self.objective = objective
