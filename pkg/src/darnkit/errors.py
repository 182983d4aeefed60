"""Exception types shared across the package."""


class DarnkitError(Exception):
    """Base class for package errors."""


class DimensionError(DarnkitError, ValueError):
    """Vector or matrix sizes do not match the form."""


class HoleError(DarnkitError, ValueError):
    """A hole specification is invalid for the given form."""


class NumericalError(DarnkitError, RuntimeError):
    """A linear-algebra step failed where it should not have."""


class SingularSystemError(NumericalError):
    """An interior Dirichlet problem has no unique solution.

    Raised for ``alpha = 0`` hitting problems when part of the interior can
    neither reach the holes nor be killed.
    """
