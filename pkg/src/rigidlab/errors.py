"""Exception types shared across the package."""


class RigidlabError(Exception):
    """Base class for all package errors."""


class ShapeError(RigidlabError):
    """Array shape or grid/domain mismatch."""


class DimensionError(RigidlabError):
    """Operation not defined for this spatial dimension."""


class PlacementError(RigidlabError):
    """Field has the wrong staggering for this operation."""


class DomainError(RigidlabError):
    """Geometry lies outside the domain or the domain is invalid."""


class ResolutionError(RigidlabError):
    """The grid is too coarse to resolve the requested construction."""


class SolvabilityError(RigidlabError):
    """Linear problem data violates its compatibility condition."""


class ConvergenceError(RigidlabError):
    """Iterative solver did not reach the requested residual."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = tuple(residuals or ())


class ConsistencyError(RigidlabError):
    """Field and its declared incompatibility measure disagree."""


class DegenerateInputError(RigidlabError):
    """Input is degenerate for the requested fit or ratio."""
