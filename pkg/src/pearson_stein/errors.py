"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A target, simulation or experiment was configured inconsistently."""


class DomainError(ValueError):
    """A function was evaluated outside the set where it is defined."""


class PoleError(ArithmeticError):
    """Evaluation hit a zero denominator (a root of b, or y = m)."""


class UnsupportedError(NotImplementedError):
    """The requested operation has no implementation for this input."""
