"""Exception types shared across the package."""


class MssanError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MssanError):
    """Bad user input: configs, file formats, ranges."""


class DimensionError(ValidationError):
    """Operands or arguments have incompatible shapes."""


class EmptyInputError(ValidationError):
    """An operation received an empty sentence or zero length."""


class ConfigurationError(ValidationError):
    """Invalid model, schedule, or run configuration."""


class MalformedTreeError(ValidationError):
    """Head indices do not encode a single rooted tree."""


class MissingTreeError(ValidationError):
    """A dependency-distance mask was requested without a tree."""


class ConlluParseError(ValidationError):
    """A CoNLL-U style file could not be parsed."""


class DegenerateRowError(MssanError):
    """A softmax row was entirely masked; valid mask sets never allow this."""


class TapeError(MssanError):
    """Gradient tape misuse, e.g. backward on a consumed tape."""


class DivergenceError(MssanError):
    """Training produced non-finite values."""
