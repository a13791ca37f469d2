"""Exception types shared across the workbench."""


class TakdError(Exception):
    """Base class for workbench errors."""


class DimensionError(TakdError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ParameterError(TakdError, ValueError):
    """A scalar argument is outside its legal range."""


class DomainError(TakdError, ValueError):
    """Numeric input violates a domain restriction (e.g. negative probability)."""


class SpecError(TakdError, ValueError):
    """A network description is internally inconsistent."""


class ConfigError(TakdError, ValueError):
    """A run configuration is invalid."""


class PathError(TakdError, ValueError):
    """A distillation path violates the strictly-decreasing-size rule."""


class LadderError(TakdError, ValueError):
    """A size ladder is malformed for the requested operation."""


class BudgetError(TakdError, RuntimeError):
    """An enumeration or search exceeds its configured budget."""


class FormatError(TakdError, ValueError):
    """A serialized artifact fails structural validation."""
