"""Exception hierarchy shared across the package."""


class ConictrlError(Exception):
    """Base class for all errors raised by conictrl."""


class InvalidModelError(ConictrlError):
    """Operator quadruple or model file is malformed."""


class InvalidInputError(ConictrlError):
    """An argument violates a documented precondition."""


class TrackingError(ConictrlError):
    """Eigenbasis continuation failed between two nearby control points.

    Raised when the best overlap of some level drops below the configured
    floor; the caller should refine the parameter step.
    """


class SeparationError(ConictrlError):
    """A band of levels is not separated from the rest of the spectrum."""


class NotAnIntersectionError(ConictrlError):
    """The requested levels are not degenerate at the given point."""


class AtIntersectionError(ConictrlError):
    """The requested levels are degenerate where they must be simple."""


class NotConicalError(ConictrlError):
    """The intersection is not conical (singular conicity matrix)."""


class FieldDegenerateError(ConictrlError):
    """The non-mixing field vanishes numerically."""


class ConstructionError(ConictrlError):
    """A curve or path could not be built to the requested accuracy."""


class SynthesisError(ConstructionError):
    """Path synthesis failed to produce a gap-validated control path."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


class ExtrapolationError(ConictrlError):
    """The limit eigenbasis along a ray did not converge."""


class StepError(ConictrlError):
    """Time stepping could not meet the local error tolerance."""


class InsufficientDataError(ConictrlError):
    """Too few samples for the requested estimate."""


class InvalidPathError(InvalidInputError):
    """A control path is degenerate (for example, it has zero length)."""


class InvalidTargetError(InvalidInputError):
    """A target distribution is not a unit vector of non-negative weights."""
