"""Exception hierarchy shared by the library and the CLI.

Each error carries a stable ``exit_code`` so the command-line frontend can
map failures onto distinct process statuses.
"""


class SplatfieldError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class FormatError(SplatfieldError):
    """A binary or JSON artifact is malformed (bad magic, size, version)."""

    exit_code = 2


class DimensionError(SplatfieldError):
    """Array shapes or channel dimensions are inconsistent."""

    exit_code = 3


class ConfigError(SplatfieldError):
    """Unknown or invalid configuration key/value."""

    exit_code = 4


class MissingLabelError(ConfigError):
    """A semantic label is absent from the embedding/object-feature table."""

    exit_code = 5


class NoObjectFoundError(SplatfieldError):
    """Open-vocabulary query matched no primitives or no cluster."""

    exit_code = 6


class DegenerateRegionError(SplatfieldError):
    """A semantic region is empty or otherwise unusable."""

    exit_code = 3


class DomainError(SplatfieldError):
    """Unknown evaluation domain or observation source."""

    exit_code = 4
