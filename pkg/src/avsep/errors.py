"""Error taxonomy shared across the package.

Every error carries a short category string; the CLI prefixes messages
with it and exits nonzero.
"""


class AvsepError(Exception):
    category = "internal"


class InvalidInputError(AvsepError):
    """Caller passed values that violate an operation's preconditions."""

    category = "invalid-input"


class FormatError(AvsepError):
    """A container file (WAV, VFEA, checkpoint, report) is malformed."""

    category = "format"


class DataError(AvsepError):
    """Corpus content is unusable (missing file, rate mismatch, NaNs)."""

    category = "data"


class ConfigError(AvsepError):
    """A configuration value is out of range or inconsistent."""

    category = "config"


class VersionError(AvsepError):
    """A persisted artifact does not match the code or config loading it."""

    category = "version"
