"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and
subclasses) -> 2, NumericError (and subclasses) -> 3.
"""


class WicrepError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(WicrepError):
    """Invalid configuration value or unknown config key."""


class DataError(WicrepError):
    """Malformed or missing input data."""


class AlignmentError(DataError):
    """A character span does not align with token boundaries."""


class VocabularyError(DataError):
    """The corpus does not supply enough distinct words for an operation."""


class NumericError(WicrepError):
    """Base class for numeric failures."""


class NumericOverflowError(NumericError):
    """A primitive produced a non-finite value."""

    def __init__(self, primitive: str, detail: str = ""):
        self.primitive = primitive
        msg = f"non-finite value produced by primitive '{primitive}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DegenerateVectorError(NumericError):
    """A zero (or otherwise degenerate) vector where a direction is required."""
