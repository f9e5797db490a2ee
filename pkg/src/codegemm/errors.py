"""Exception hierarchy shared by all codegemm modules."""


class CodeGemmError(Exception):
    """Base class for all library errors."""


class ConfigError(CodeGemmError):
    """Invalid hyperparameters or a divisibility rule violation."""


class ShapeError(CodeGemmError):
    """Operand shapes are inconsistent for the requested operation."""


class FormatError(CodeGemmError):
    """Malformed on-disk data (base class for file-format errors)."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """File carries a format version this library does not read."""


class TruncatedFileError(FormatError):
    """File ends before the payload promised by its header."""


class DimOverflowError(FormatError):
    """Header dimensions imply a payload too large to represent."""


class IntegrityError(CodeGemmError):
    """Loaded or computed data violates a structural invariant."""
