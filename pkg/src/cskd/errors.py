"""Exception types raised across the package."""


class CSKDError(Exception):
    """Base class for all package errors."""


class DimensionError(CSKDError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(CSKDError, ValueError):
    """An argument lies outside the domain of the operation."""


class ContractError(CSKDError, RuntimeError):
    """A caller violated an operation contract (e.g. stop-gradient)."""


class NumericError(CSKDError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class SpecError(CSKDError, ValueError):
    """An architecture description is invalid."""


class ConfigError(CSKDError, ValueError):
    """A run configuration is invalid or inconsistent."""


class MapError(CSKDError, KeyError):
    """A label is missing from a fine-to-coarse map."""


class FormatError(CSKDError, ValueError):
    """A binary or text file does not follow its expected layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
