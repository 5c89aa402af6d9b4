"""slimdet: style-linguistics mismatch engine for audio deepfake detection.

Works on subspace embedding tensors (layers x features x time): one-class
self-contrastive dependency learning, supervised real/fake classification
on top of the frozen dependency features, and the accompanying analysis
toolkit (CCA probe, mismatch distributions, layer correlation maps,
EER/F1 evaluation).
"""

from .errors import (
    ConfigError,
    CorruptionError,
    DataError,
    DimensionError,
    FormatError,
    ManifestError,
    NumericalError,
    SlimError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorruptionError",
    "DataError",
    "DimensionError",
    "FormatError",
    "ManifestError",
    "NumericalError",
    "SlimError",
    "__version__",
]
