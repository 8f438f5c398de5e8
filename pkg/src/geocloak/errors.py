"""Exception hierarchy shared by all geocloak modules.

The CLI maps these onto exit codes: configuration problems are usage
errors (exit 1), data problems are exit 2, anything else is internal
(exit 3).
"""


class GeocloakError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(GeocloakError):
    """A parameter or setup value is invalid (bad cell size, k > n, ...)."""


class DegenerateInputError(GeocloakError):
    """Input is structurally too small for the operation (e.g. a 2x2 image)."""


class DataError(GeocloakError):
    """Input data is missing, inconsistent, or unusable."""


class IngestionError(DataError):
    """A record could not be ingested (duplicate id, unreadable target)."""


class ImageFormatError(DataError):
    """An image file could not be decoded."""


class MalformedHeaderError(ImageFormatError):
    """The image header is syntactically invalid or out of spec."""


class TruncatedDataError(ImageFormatError):
    """The pixel payload ends before width*height*3 bytes."""


class UndefinedMetricError(DataError):
    """A metric's denominator is empty (e.g. no correctly located images)."""
