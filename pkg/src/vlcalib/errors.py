"""Exception taxonomy for the toolkit.

Every error raised on purpose by this package derives from
:class:`VlcalibError`, so callers can catch one type at a boundary (the CLI
does exactly that). Subclasses distinguish failures a caller may want to
handle differently: malformed files vs. truncated files, bad arguments vs.
numerically degenerate inputs, and failures during optimization.
"""


class VlcalibError(Exception):
    """Base class for all errors raised by this package."""


class FileFormatError(VlcalibError):
    """A file is not in the expected binary format (e.g. wrong magic)."""


class InvalidHeaderError(FileFormatError):
    """A file header is structurally valid but describes an impossible object."""


class CorruptFileError(FileFormatError):
    """A file ended early or carries a payload inconsistent with its header."""


class ValidationError(VlcalibError):
    """An in-memory input violates a documented precondition."""


class DegeneracyError(VlcalibError):
    """An input is numerically degenerate (zero norm, empty class, ...)."""


class ConfigurationError(VlcalibError):
    """A configuration combines options that cannot be run together."""


class TrainingError(VlcalibError):
    """Full-batch training diverged or hit a non-finite loss."""


class AdaptationError(VlcalibError):
    """Test-time adaptation could not be performed on the given batch."""
