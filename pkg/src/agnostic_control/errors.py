"""Exception types raised across the package."""


class AgnosticControlError(Exception):
    """Base class for all package errors."""


class InvalidArgument(AgnosticControlError, ValueError):
    pass


class ContractViolation(AgnosticControlError):
    """A strategy broke one of its runtime contracts."""

    def __init__(self, message, t=None, u=None):
        super().__init__(message)
        self.t = t
        self.u = u


class Diverged(AgnosticControlError):
    """The particle left the representable range."""

    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


class EstimationFailed(AgnosticControlError):
    pass


class UnknownClaim(AgnosticControlError, KeyError):
    pass


class UnknownStrategy(AgnosticControlError, KeyError):
    pass
