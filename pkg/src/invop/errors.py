"""Exception types raised by invop."""


class InvopError(Exception):
    """Base class for all library errors."""


class ShapeError(InvopError, ValueError):
    """Input or operand shape does not match what the operation expects."""


class SingularOperatorError(InvopError, ValueError):
    """Inversion hit a frequency or diagonal entry below the singularity threshold."""


class NotInvertibleError(InvopError, TypeError):
    pass


class NotLinearError(InvopError, TypeError):
    pass


class NotDifferentiableError(InvopError, TypeError):
    pass


class NoProxError(InvopError, TypeError):
    """The cost has no implemented proximity operator."""


class ConfigError(InvopError, ValueError):
    """Malformed JSON configuration or invalid parameter combination."""


class SolverError(InvopError, RuntimeError):
    """Numerical failure inside an iterative solver."""
