"""Exception hierarchy shared by every stage of the pipeline."""


class ColiError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class FormatError(ColiError):
    """Malformed, truncated or unsupported input data."""


class TruncatedError(FormatError):
    """Input ended before a complete record could be read."""


class ChecksumError(FormatError):
    """Container CRC32 does not match its contents."""


class VersionError(FormatError):
    """Container version is not supported by this build."""


class ShapeError(ColiError, ValueError):
    """Tensor or image shapes are inconsistent."""


class NumericError(ColiError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    exit_code = 4
