"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError and
ModelFormatError -> 2, anything else raised mid-run -> 3.
"""


class SpikeconvError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpikeconvError):
    """Invalid, inconsistent, or unknown configuration content."""


class DataError(SpikeconvError):
    """Dataset files that are missing, malformed, or inconsistent."""


class ModelFormatError(SpikeconvError):
    """Model container that cannot be parsed."""


class UnsupportedVersionError(ModelFormatError):
    """Model container with a valid frame but an unknown version."""


class TrainingError(SpikeconvError):
    """Hard runtime failure while training or evaluating."""
