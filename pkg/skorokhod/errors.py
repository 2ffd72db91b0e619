class SkorokhodError(ValueError):
    """Base class for every failure raised by the library."""


class InvalidDataError(SkorokhodError):
    """Input data failed validation; the message names the violated invariants."""


class DomainViolationError(SkorokhodError):
    pass


class UnsupportedConfigurationError(SkorokhodError):
    pass


class AssumptionViolationError(SkorokhodError):
    pass


class SizeError(SkorokhodError):
    pass


class NumericalError(SkorokhodError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(SkorokhodError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TraceError(SkorokhodError):
    pass


class DecompositionError(SkorokhodError):
    pass


class WMembershipError(SkorokhodError):
    """A face set where H_x and span d(x) fail to span the whole space."""


class DerivativeUndefinedError(SkorokhodError):
    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class EpsilonTooLargeError(SkorokhodError):
    pass


class SolverMismatchError(SkorokhodError):
    pass
