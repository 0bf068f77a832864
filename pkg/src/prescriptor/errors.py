"""Exception types shared across the package."""

from __future__ import annotations


class PrescriptorError(Exception):
    """Base class for domain errors raised by this package."""


class DimensionError(PrescriptorError, ValueError):
    """Quantities with incompatible dimensions were combined."""


class UnitParseError(PrescriptorError, ValueError):
    """A unit expression could not be resolved against the registry."""


class SingularityError(PrescriptorError, ValueError):
    """A field point lies within the clearance of a current filament."""


class ProtocolViolation(PrescriptorError):
    """A pre-commitment rule of the 2x2 protocol was broken."""


class SchemaError(PrescriptorError, ValueError):
    """An ingested file does not match its declared column layout."""


class UnknownChannel(PrescriptorError, KeyError):
    """A channel id or alias is not registered."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown channel"
