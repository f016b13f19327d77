"""Exception hierarchy.

Validation problems (bad values, shapes, parameters) derive from
``ValidationError``; anything wrong with bytes on disk derives from
``FormatError``. The CLI maps the first to exit code 1 and the second to 2.
"""


class ValidationError(ValueError):
    pass


class DegenerateSeriesError(ValidationError):
    """Time series too short for a temporal transform."""


class ShapeMismatchError(ValidationError):
    pass


class NotNormalizedError(ValidationError):
    pass


class FormatError(OSError):
    """Malformed or unsupported file content."""
