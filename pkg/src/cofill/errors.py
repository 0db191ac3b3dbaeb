"""Exception types shared across the package."""


class CofillError(Exception):
    """Base class for package errors."""


class ShapeError(CofillError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(CofillError, ValueError):
    """A call violated an operation's precondition."""


class ConfigError(CofillError, ValueError):
    """Invalid run configuration (bad key, bad value, bad range)."""


class ParseError(CofillError, ValueError):
    """A data file could not be parsed; message carries the location."""


class TrainingDiverged(CofillError, RuntimeError):
    """Training produced a non-finite loss."""


class NotFittedError(CofillError, RuntimeError):
    """Estimator used before fit()."""
