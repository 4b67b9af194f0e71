"""Exception hierarchy shared by all stages.

The CLI maps these onto exit codes: configuration problems exit with 1,
numerical or invariant failures with 2, and I/O problems with 3.
"""


class SqueezeLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SqueezeLabError, ValueError):
    """Invalid or incomplete configuration (bad keys, units, grid setup)."""


class NumericalError(SqueezeLabError, ArithmeticError):
    """A numerical routine failed or its preconditions were violated."""


class DomainError(NumericalError, ValueError):
    """Input outside the domain of a physical model (wavelength band, evanescent wave)."""


class PhaseMatchingError(NumericalError):
    """No phase-matching angle exists on the search bracket."""


class InputError(NumericalError, ValueError):
    """Malformed numerical input, e.g. a non-symmetric kernel or mismatched grids."""


class InvariantError(NumericalError):
    """A post-condition check on a computed artifact failed."""


class InsufficientDataError(InputError):
    """A trace is too short for the requested statistic."""


class IncompleteBasisError(InputError):
    """Sum-mode measurements are missing for some basis pairs."""


class TraceIOError(SqueezeLabError, OSError):
    """A trace, block or manifest file could not be read or parsed."""
