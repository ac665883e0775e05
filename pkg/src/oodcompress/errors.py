"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Array dimensions do not compose; the message names the offending layer."""


class DomainError(ValueError):
    """An argument lies outside its documented domain."""


class CapacityError(ValueError):
    """Not enough samples or channels to satisfy the request."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or violates the schema."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the engine guarantees finiteness."""
