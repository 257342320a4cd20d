"""Shared exception types.

Every module raises one of these instead of bare ValueError so that the CLI
can map failures onto its exit codes (usage=1, numeric=2, io=3).
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Input values fall outside an operation's documented domain."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class ContractError(ValueError):
    """An API precondition was violated (e.g. non-scalar loss)."""


class NumericError(ArithmeticError):
    """A numeric procedure produced non-finite values or failed to converge."""
