"""Exception hierarchy shared by every klflow module."""


class KLFlowError(Exception):
    """Base class for all library errors."""


class InputError(KLFlowError, ValueError):
    """Malformed argument: wrong shape, dimension mismatch, out-of-range value."""


class CapabilityError(KLFlowError):
    """A target lacks the access mode (score, sampler, ...) an operation needs."""

    def __init__(self, capability, what="target"):
        self.capability = capability
        super().__init__(f"{what} lacks required capability {capability!r}")


class AbsoluteContinuityError(KLFlowError, ValueError):
    """Target mass sits on an atom where the reference measure has none."""


class ConfigurationError(KLFlowError, ValueError):
    pass


class UnsupportedConfigurationError(ConfigurationError):
    pass


class ConvergenceError(KLFlowError, RuntimeError):
    def __init__(self, message, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")


class NumericalError(KLFlowError, ArithmeticError):
    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message if index is None else f"{message} at node {index}")


class ScaleError(KLFlowError, ValueError):
    pass


class ParseError(KLFlowError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class CapabilityMismatchError(ConfigurationError, CapabilityError):
    """A configured flow needs a capability the configured target lacks."""

    def __init__(self, capability, kind):
        self.capability = capability
        self.kind = kind
        KLFlowError.__init__(self, f"flow {kind!r} needs target capability {capability!r}, "
                                   "which the configured target does not provide")
