"""Exception hierarchy shared by every camforge module."""


class CamforgeError(Exception):
    """Base class; ``kind`` is the short tag the CLI prints."""

    kind = "error"


class ConfigurationError(CamforgeError, ValueError):
    kind = "configuration"


class InputError(CamforgeError, ValueError):
    kind = "input"


class UsageError(CamforgeError, RuntimeError):
    kind = "usage"


class NumericalError(CamforgeError, FloatingPointError):
    kind = "numerical"


class FormatError(CamforgeError, ValueError):
    kind = "format"


class CorruptWeightsError(FormatError):
    kind = "corrupt-weights"


class MagicMismatchError(FormatError):
    kind = "magic-mismatch"


class UnknownTensorError(FormatError):
    kind = "unknown-tensor"


class MissingTensorError(FormatError):
    kind = "missing-tensor"


class DimensionMismatchError(FormatError):
    kind = "dimension-mismatch"


class ParseError(FormatError):
    kind = "parse"
