"""Exception hierarchy shared by all geoshadow modules."""


class GeoShadowError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(GeoShadowError, ValueError):
    """Invalid model or field-set configuration (bad period, bad mu, ...)."""


class DomainError(GeoShadowError, ValueError):
    """A point was evaluated outside the admissible slow domain."""


class EscapeError(DomainError):
    """A trajectory left the domain box by more than the allowed margin."""


class NumericalError(GeoShadowError, ArithmeticError):
    """A computation produced non-finite values or failed a residual check."""


class InputError(GeoShadowError, ValueError):
    """User-supplied data (curve samples, codes, vectors) is malformed."""


class PreconditionError(GeoShadowError, ValueError):
    """An operation was called with its stated precondition violated."""


class SelectionError(GeoShadowError):
    """A cone basis does not contain the target vector (negative guiding time)."""


class ConditioningError(NumericalError):
    """A guiding-vector matrix is too ill-conditioned to invert."""


class BackwardStepError(NumericalError):
    """Newton iteration for the inverse slow map did not converge."""


class RangeError(GeoShadowError, ValueError):
    """A curve parameter lies outside the planned horizon."""


class ShadowingFailure(GeoShadowError):
    """A planned waypoint was missed by more than the theoretical bound.

    ``diagnostics`` carries the waypoint index, achieved distance and the
    constants used for the bound so callers can report them.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
