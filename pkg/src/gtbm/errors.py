"""Exception types shared across the package."""


class GtbmError(Exception):
    """Base class for all package errors."""


class DomainError(GtbmError):
    """Point outside the validity region of its chart."""


class TimeRangeError(GtbmError):
    """Metric evaluated outside the lifetime of the family."""


class UnsupportedOperationError(GtbmError):
    """Closed-form evaluator requested from a numeric-only family."""


class NoOverlapError(GtbmError):
    """Chart transition requested outside the overlap region."""


class NonSPDError(GtbmError):
    """Matrix expected to be symmetric positive definite is not."""


class StabilityError(GtbmError):
    """Explicit time stepper violated its stability bound or blew up."""


class ResolutionError(GtbmError):
    """Grid too coarse for the requested solve."""


class SnapshotFormatError(GtbmError):
    """Snapshot file is truncated, corrupt, or of an unknown version."""


class FrameGramError(GtbmError):
    """Frame orthonormality drifted beyond tolerance (discretization failure)."""


class PathExitError(GtbmError):
    """A simulated path left the hard validity region of its chart."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateSampleError(GtbmError):
    """Statistical test received a degenerate (zero-spread) sample."""


class ConfigError(GtbmError):
    """Experiment configuration is malformed; message names the field."""
