"""Exception types raised across the package."""


class HobmError(Exception):
    """Base class for all package errors."""


class UsageError(HobmError, ValueError):
    """Bad arguments: mismatched sizes, out-of-range orders, empty inputs."""


class DomainError(HobmError, ValueError):
    """Input outside the domain of a transform (e.g. log of a zero probability)."""


class NumericRangeError(HobmError, ArithmeticError):
    """A computation left the representable floating-point range."""


class InconsistentEtaError(HobmError, ValueError):
    """Expectation coordinates that do not correspond to any distribution."""


class DivergenceUndefinedError(HobmError, ValueError):
    """KL(p, q) requested where q has a zero inside the support of p."""


class PreconditionError(HobmError, ValueError):
    """A documented precondition of an operation does not hold."""


class NonConvergenceError(HobmError, RuntimeError):
    """Iterative fitting diverged. ``diagnostics`` holds the partial trace."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
