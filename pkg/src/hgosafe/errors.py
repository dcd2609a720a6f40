"""Exception hierarchy.

Two families matter to the CLI: ``ConfigError`` (exit status 1) and
``NumericalError`` (exit status 2). Everything else is a bug.
"""


class HgoSafeError(Exception):
    """Base class for all package errors."""


class ConfigError(HgoSafeError, ValueError):
    pass


class ExprSyntaxError(ConfigError):
    """Malformed a(x)/b(x) expression; ``position`` is a 0-based column."""

    def __init__(self, message, text, position):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at column {position + 1}\n  {text}\n  {pointer}")


class NumericalError(HgoSafeError):
    pass


class SingularMatrixError(NumericalError, ValueError):
    pass


class NonConvergenceError(NumericalError, RuntimeError):
    pass


class AsymmetryError(NumericalError, ValueError):
    pass


class NotHurwitzError(NumericalError, ValueError):
    def __init__(self, message, roots=()):
        self.roots = list(roots)
        super().__init__(message)


class IndefiniteError(NumericalError, ValueError):
    pass


class MatrixOverflowError(NumericalError, OverflowError):
    pass


class AssumptionViolation(NumericalError, ValueError):
    """a(x) dropped below a0 somewhere it was evaluated."""


class BlowUpError(NumericalError, RuntimeError):
    def __init__(self, message, time=None, state=None):
        self.time = time
        self.state = state
        super().__init__(message)


class CapViolationError(NumericalError, ValueError):
    def __init__(self, message, binding=None):
        self.binding = binding
        super().__init__(message)


class InfeasibleError(NumericalError, ValueError):
    pass


class EmptySetError(NumericalError, ValueError):
    pass


class GridMismatchError(HgoSafeError, ValueError):
    pass


class CFLError(NumericalError, ValueError):
    pass
