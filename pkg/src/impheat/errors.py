"""Exception hierarchy shared by all modules."""


class ImpheatError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(ImpheatError, ValueError):
    """Invalid user-supplied parameters (domain, constants, config file)."""


class ContractViolation(ImpheatError, ValueError):
    """A caller broke an operation's precondition."""


class DegenerateRegionError(ImpheatError, ValueError):
    """A region resolved to no usable nodes."""


class InsufficientBasisError(ImpheatError, ValueError):
    """A spectral request needs eigenpairs the basis does not hold."""


class NumericalError(ImpheatError, RuntimeError):
    """An iterative or factorization routine failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientDataError(ImpheatError, ValueError):
    """Too few samples or stages for a fit."""
