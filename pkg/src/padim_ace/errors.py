"""Exception hierarchy shared by every module."""


class PadimAceError(Exception):
    """Base class for all package errors."""


class TensorFormatError(PadimAceError, ValueError):
    """Malformed NPY magic, header or payload."""


class UnsupportedLayoutError(TensorFormatError):
    """Fortran-ordered arrays are not accepted."""


class TensorDtypeError(PadimAceError, TypeError):
    """Dtype outside {float32, float64, uint8}."""


class NumericError(PadimAceError, ArithmeticError):
    """A computation produced a non-finite or out-of-domain value."""


class ConfigurationError(PadimAceError):
    """Inconsistent run configuration or model state."""


class EmptySignatureError(PadimAceError):
    """No patch vectors were available to build a target signature."""


class PlacementError(PadimAceError):
    """A synthetic target could not be placed inside the scene."""


class UndefinedMetricError(PadimAceError):
    """A metric is undefined for the given labels (e.g. a single class)."""
