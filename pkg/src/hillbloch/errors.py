"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class HillError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(HillError, ValueError):
    """An argument violates a documented precondition."""


class IntegrationError(HillError):
    """The ODE integrator could not produce a trustworthy solution."""


class RootNotFoundError(HillError):
    """No band eigenvalue was found near the requested seed."""


class NearMultipleError(HillError):
    """The band point is numerically a multiple root; bundle handling is needed."""


class BranchCrossingError(HillError):
    """A traced band jumped by more than the local seed spacing."""

    def __init__(self, message: str, node_index: int):
        super().__init__(message)
        self.node_index = node_index


class BranchAmbiguityError(HillError):
    """Consecutive discriminant values are too far apart to continue a square-root branch."""


class IncompleteSearchError(HillError):
    """The argument-principle count disagrees with the number of located zeros."""


class DegeneratePairError(HillError):
    """A biorthogonal pair was requested at a (numerically) multiple eigenvalue."""


class FormulaInapplicableError(HillError):
    """The closed-form alpha identity cannot be used because phi(1, lambda) vanishes."""


class InconsistentNumberingError(HillError):
    """No traced band converges to a located multiple eigenvalue."""


class KMaxTooSmallError(HillError):
    """Band isolation was not reached before the largest traced index."""


class ConfigError(HillError):
    """A run configuration is malformed or out of range."""
