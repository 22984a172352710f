"""Exception types shared across the package."""


class TwoSwitchError(Exception):
    """Base class for package errors."""


class DimensionError(TwoSwitchError, ValueError):
    """Matrix or vector dimensions do not agree."""


class ValidationError(TwoSwitchError, ValueError):
    """An input object violates a documented invariant.

    The message names the offending field so scenario files can be fixed
    without reading the loader source.
    """


class SolverError(TwoSwitchError, RuntimeError):
    """An iterative numerical procedure failed to converge."""


class NumericError(TwoSwitchError, ArithmeticError):
    """A numerically singular or non-finite quantity was encountered."""


class BudgetError(TwoSwitchError, ValueError):
    """A requested exact computation exceeds its tractable size cap."""
