"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from
:class:`MagwellError`, so callers (and the CLI) can distinguish "the input
violates a precondition" from "the numerics did not converge".
"""


class MagwellError(Exception):
    """Base class for all package errors."""


class ValidationError(MagwellError):
    """A declared precondition on inputs or configuration is violated."""


class ConfigError(ValidationError):
    """A config document is malformed (unknown key, bad type, bad value)."""


class ConvergenceError(MagwellError):
    """An iterative solver stopped without meeting its tolerance.

    Carries the best residual norms and the iteration count reached, when
    the solver had them, so callers can report how close the run got.
    """

    def __init__(self, message, residual_norms=None, iterations=None):
        super().__init__(message)
        self.residual_norms = residual_norms
        self.iterations = iterations


class StagnationError(ConvergenceError):
    """Residuals stopped improving long before the tolerance was met."""


class PreconditionerError(MagwellError):
    """The requested preconditioner cannot be built for this operator."""


class BracketError(MagwellError):
    """A 1D search bracket does not contain the feature it should."""


class DegenerateMinimumError(MagwellError):
    """A located extremum has nonpositive curvature."""


class RangeError(MagwellError):
    """A tabulated quantity was requested outside its covered range."""


class CoverageError(RangeError):
    """A level set or eigenfunction reaches the edge of the computational box."""


class ResolutionError(MagwellError):
    """A sampled quantity varies too fast for the grid resolving it."""


class RegularityError(MagwellError):
    """A level set fails the regularity hypothesis (vanishing gradient)."""


class DiagnosticError(MagwellError):
    """A diagnostic fit has no usable data (e.g. under-resolved tail)."""


class PipelineError(MagwellError):
    """A pipeline stage failed; partial artifacts were kept."""
