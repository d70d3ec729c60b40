"""Exception types shared across the toolkit."""


class SpecdeformError(Exception):
    """Base class for all toolkit errors."""


class StripViolation(SpecdeformError):
    """An evaluation point left the admissible complex strip."""


class ToleranceNotMet(SpecdeformError):
    """Adaptive error control could not reach the requested tolerance."""


class NonFinite(SpecdeformError):
    """A sampled quantity was NaN or infinite."""


class QuadratureFailure(SpecdeformError):
    """Numerical quadrature did not converge."""


class SingularU(SpecdeformError):
    """The screened resolvent solution vanished on the source support."""


class GridTooCoarse(SpecdeformError):
    """The requested grid cannot resolve the object being discretized."""


class BranchFailure(SpecdeformError):
    """A tracked argument left the principal branch."""


class ConvergenceFailure(SpecdeformError):
    """An eigenvalue or iterative solve failed to converge."""


class ContourTooClose(SpecdeformError):
    """A quadrature contour passes too close to the spectrum."""


class SolveFailure(SpecdeformError):
    """A dense linear solve failed."""


class ReducedSingular(SpecdeformError):
    """The complement-subspace solve hit the reduced spectrum."""


class MatchingAmbiguous(SpecdeformError):
    """Two candidates matched one target within tolerance."""


class ThresholdTooClose(SpecdeformError):
    """The probe energy is too close to the threshold set."""


class ThresholdCollision(SpecdeformError):
    """A scan rectangle intersects the threshold set."""


class RadiusExceeded(SpecdeformError):
    """A deformation parameter left its admissible disc."""


class InsufficientPoints(SpecdeformError):
    """Not enough samples for the requested fit."""


class NotApplicable(SpecdeformError):
    """A check's structural precondition does not hold."""


class MissingStage(SpecdeformError):
    """A pipeline stage's inputs have not been produced yet."""


class ConfigError(SpecdeformError):
    """A scenario file failed validation."""
