"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: config/usage problems exit 2,
data/file problems exit 3, numerical failures exit 4.
"""


class SlimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SlimError):
    """Invalid configuration, flags, or caller misuse."""


class DimensionError(SlimError):
    """Shape or dimension contract violated."""


class DataError(SlimError):
    """Problem with an input file or dataset."""


class FormatError(DataError):
    """File does not follow the expected binary/text layout."""


class CorruptionError(DataError):
    """Checksum mismatch: the file content is damaged."""


class ManifestError(DataError):
    """Manifest line failed to parse or validate."""


class NumericalError(SlimError):
    """Non-finite value or other numerical failure."""
