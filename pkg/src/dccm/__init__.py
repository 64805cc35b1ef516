"""Discrete-time contraction-metric control: data, training, geodesics, certification, simulation."""

from .errors import (ConfigError, ContractError, DccmError, InfeasibleReferenceError,
                     NumericOverflowError, ParseError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DccmError", "InfeasibleReferenceError",
           "NumericOverflowError", "ParseError", "__version__"]
