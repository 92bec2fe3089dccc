"""Exception hierarchy shared by every module."""


class SGHAError(Exception):
    """Base class for all package errors."""


class ParameterError(SGHAError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ParameterError):
    """Array extents do not match what the operation expects."""


class DegenerateInputError(SGHAError, ValueError):
    """Input is mathematically degenerate (e.g. a zero-norm vector in a cosine)."""


class EvaluationError(SGHAError, RuntimeError):
    """An objective produced a non-finite value."""


class TokenizationError(ParameterError):
    """Token sequence is malformed for the text tower."""


class WeightFileError(SGHAError):
    """Base class for weight-file decoding failures."""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class HeaderMismatchError(WeightFileError):
    """Tensor extents in the file disagree with the stored configuration."""


class ImageFormatError(SGHAError):
    """A PPM file could not be parsed or has unexpected dimensions."""


class EmptyPoolError(SGHAError):
    pass


class ExportError(SGHAError):
    """Quantized export would break the perturbation budget."""


class ConfigError(SGHAError):
    """Run configuration is invalid (unknown key, bad value, missing path)."""
