"""Exception hierarchy shared by all pulsebranch modules."""


class PulseBranchError(Exception):
    """Base class for every error raised by this package."""


class InputError(PulseBranchError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(InputError):
    """A numeric argument lies outside the domain of a function."""


class ConvergenceError(PulseBranchError, RuntimeError):
    """An iterative numerical method failed to reach its tolerance."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class NumericalIntegrityError(PulseBranchError, ArithmeticError):
    """A computed quantity left its physically allowed range.

    ``zeta`` and ``value`` locate the first offending sample.
    """

    def __init__(self, message, zeta=None, value=None):
        super().__init__(message)
        self.zeta = zeta
        self.value = value


class TruncationError(PulseBranchError, RuntimeError):
    """A truncated sum could not reach its target within the hard cap."""


class OracleUnreliableError(PulseBranchError, RuntimeError):
    """The Taylor-coefficient oracle's least-squares fit is ill-conditioned."""


class UndefinedCoherenceError(PulseBranchError, ValueError):
    """Optical coherence orders are undefined for a state with no photons."""
