"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class ContractError(RuntimeError):
    """A precondition of an operation was violated."""


class ConfigError(ValueError):
    """Invalid configuration value, key, or file layout."""


class NumericError(ArithmeticError):
    """A loss or gradient became non-finite."""
