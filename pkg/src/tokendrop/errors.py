"""Error taxonomy shared by the library and the CLI.

Each class carries a distinct process exit code so the CLI can map
failures to stable statuses for scripting.
"""


class TokenDropError(Exception):
    """Base class for all tokendrop errors."""

    exit_code = 1


class ConfigError(TokenDropError):
    """Invalid configuration value or flag combination."""

    exit_code = 2


class InputShapeError(TokenDropError):
    """Array/grid dimensions do not match the declared geometry."""

    exit_code = 3


class DataError(TokenDropError):
    """Non-finite or otherwise unusable sample values."""

    exit_code = 4


class FormatError(TokenDropError):
    """Malformed serialized file (bad magic, truncation, checksum)."""

    exit_code = 5


class SequenceError(TokenDropError):
    """Temporal steps arrived out of order."""

    exit_code = 6


class IoError(TokenDropError):
    """Filesystem-level read/write failure."""

    exit_code = 7
