"""
Error hierarchy shared by every service.

Each error also subclasses the closest builtin so callers that only know
about ValueError / IndexError / ArithmeticError keep working.
"""


class NatsError(Exception):
    """Base class for all toolkit errors."""
    pass


class ContractError(NatsError, ValueError):
    """A caller violated an operation's precondition."""
    pass


class ConfigError(NatsError, ValueError):
    """A configuration value or combination of values is invalid."""
    pass


class DimensionError(NatsError, ValueError):
    """Tensor shapes are not conformable for the requested operation."""
    pass


class NumericError(NatsError, ArithmeticError):
    """NaN or Inf where finite values are required."""
    pass


class VocabIndexError(NatsError, IndexError):
    """A token id falls outside its (extended) vocabulary."""
    pass


class DataError(NatsError, ValueError):
    """Training data cannot be scored by the model (e.g. unreachable target)."""
    pass


class CheckpointError(NatsError, ValueError):
    """Checkpoint file is malformed or does not match the expected model."""
    pass
