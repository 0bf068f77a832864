"""Separable loss-channel prescriptors: rho * G estimators, closure checks and test protocols."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DimensionError,
    PrescriptorError,
    ProtocolViolation,
    SchemaError,
    SingularityError,
    UnitParseError,
    UnknownChannel,
)
from .units import CONSTANTS, DimVector, Quantity, parse_amount, parse_quantity, q  # noqa: E402

__all__ = [
    "__version__",
    "CONSTANTS",
    "DimVector",
    "Quantity",
    "q",
    "parse_quantity",
    "parse_amount",
    "PrescriptorError",
    "DimensionError",
    "UnitParseError",
    "SingularityError",
    "ProtocolViolation",
    "SchemaError",
    "UnknownChannel",
]
