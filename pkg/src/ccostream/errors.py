"""Exception types shared across the package."""


class CcoError(Exception):
    """Base class for all package errors."""


class ShapeError(CcoError, ValueError):
    """Operand shapes or precisions do not line up."""


class NumericError(CcoError, FloatingPointError):
    """A public operation produced (or was handed) NaN/Inf."""


class MaskError(CcoError, ValueError):
    """An attention mask violates its contract, e.g. a fully blocked row."""


class ConfigError(CcoError, ValueError):
    """Inconsistent configuration or configuration/model mismatch."""


class StreamStateError(CcoError, RuntimeError):
    """Operation not allowed in the current session state."""


class FormatError(CcoError, ValueError):
    """Malformed weights or input file."""
