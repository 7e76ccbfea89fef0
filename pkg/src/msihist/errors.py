"""Exception types shared across the package.

Everything that signals bad user input (malformed files, contract
violations, degenerate data) derives from :class:`ValidationError` so the
CLI can map it to exit code 1; anything else is a runtime failure
(exit code 2).
"""


class ValidationError(ValueError):
    """Invalid input: bad arguments, malformed files, violated preconditions."""


class DataFormatError(ValidationError):
    """A file or stream does not conform to its documented format."""


class DegenerateInputError(ValidationError):
    """Input is syntactically fine but numerically degenerate (e.g. zero variance)."""
