"""Exception types shared across the package."""


class SemiflowError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SemiflowError, ValueError):
    """Malformed or out-of-contract input (bad shapes, ranges, asymmetry)."""


class DegenerateEndpointError(SemiflowError):
    """The family is degenerate at an endpoint where invertibility is required."""


class IntegrationBlowupError(SemiflowError):
    """Non-finite values appeared during propagation; input scale is likely bad."""


class BoundaryZeroError(SemiflowError):
    """A zero of the determinant map lies too close to the integration boundary."""

    def __init__(self, message: str, z: complex):
        super().__init__(f"{message} (offending z = {z!r})")
        self.z = z


class IrregularInstantError(SemiflowError):
    """A conjugate instant with degenerate restricted form was used where a
    regular one is required; use the winding-based local multiplicity instead."""


class DeltaRegularizationError(SemiflowError):
    """The shift ladder failed to produce two agreeing regular computations."""


class UncertifiedDipError(SemiflowError):
    """A singular-value dip could not be certified or ruled out as a zero."""


class HomogeneousFitError(SemiflowError):
    """No stable lowest-degree homogeneous part could be fitted."""


class H1ViolationError(SemiflowError):
    """The fitted homogeneous pair has a nonisolated zero (common real root)."""
