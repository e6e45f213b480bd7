"""Exception hierarchy for the copra package.

Conditions that only degrade a result (floor fallbacks, endpoint selections,
pseudo-inverse use) are reported as result fields, never raised.
"""


class CopraError(Exception):
    """Base class for every error raised by copra."""


# problem generation
class UnknownProblem(CopraError, ValueError):
    pass


class InvalidDimension(CopraError, ValueError):
    pass


class DegenerateSignal(CopraError, ValueError):
    pass


# factorization
class InvalidMatrix(CopraError, ValueError):
    pass


class FactorizationFailed(CopraError, RuntimeError):
    pass


class InvalidThresholdConstant(CopraError, ValueError):
    pass


# regularizer
class SingularSystem(CopraError, ArithmeticError):
    pass


class OutOfDomain(CopraError, ValueError):
    pass


class NotApplicable(CopraError, ValueError):
    """The closed-form small root needs at least one trivial singular value."""


class NoConvergence(CopraError, RuntimeError):
    def __init__(self, message: str, rho: float = float("nan"), iters: int = 0):
        super().__init__(message)
        self.rho = rho
        self.iters = iters


class DerivativeVanished(CopraError, ArithmeticError):
    def __init__(self, message: str, rho: float = float("nan")):
        super().__init__(message)
        self.rho = rho


# baselines and diagnostics
class NoCorner(CopraError, RuntimeError):
    pass


class InvalidCovariance(CopraError, ValueError):
    pass


class DegenerateCovariance(CopraError, ValueError):
    pass


class Undefined(CopraError, ArithmeticError):
    pass


# harness
class SweepFailed(CopraError, RuntimeError):
    def __init__(self, message: str, failures: dict):
        super().__init__(message)
        self.failures = failures
