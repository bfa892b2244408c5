"""Exception hierarchy shared across the pipeline."""


class SecatError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ValidationError(SecatError):
    """Bad arguments or an invalid configuration value."""


class FormatError(SecatError):
    """Malformed file header, magic bytes, or version."""


class LengthError(SecatError):
    """Payload shorter or longer than the header promises."""


class DegenerateInputError(SecatError):
    """Numerically unusable input (e.g. a zero row before normalization)."""


class SamplingError(SecatError):
    """An episode or task could not be drawn under the given constraints."""


class ConfigurationError(SecatError):
    """Mismatched shapes/lexicons between artifacts that must agree."""


class DataError(SecatError):
    """A referenced record (row id, cluster id) does not exist."""


class OptimizerDivergenceError(SecatError):
    """Non-finite loss or gradient during training."""
