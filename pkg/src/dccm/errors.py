"""Exception types shared across the package."""


class DccmError(Exception):
    """Base class for all package errors."""


class ContractError(DccmError, ValueError):
    """An argument violates a shape or precondition contract."""


class NumericOverflowError(DccmError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigError(DccmError, ValueError):
    """Invalid configuration (bad step sizes, unknown keys, ...)."""


class ParseError(DccmError, ValueError):
    """A dataset or checkpoint file could not be decoded."""


class InfeasibleReferenceError(DccmError, ValueError):
    """The reference model cannot produce an input for the requested setpoint."""
