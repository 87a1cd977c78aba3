"""Exception hierarchy shared across modules.

Two branches matter to the CLI exit-code mapping: DataError (bad inputs,
broken files, schema violations -> exit 3) and NumericError (non-finite
values produced during computation -> exit 4).
"""


class RefrankError(Exception):
    """Base class for all refrank errors."""


class DataError(RefrankError):
    """Invalid or inconsistent input data."""


class NumericError(RefrankError):
    """Non-finite or otherwise unusable numeric result."""


class DimMismatch(DataError):
    """Vector or matrix dimensions disagree."""


class ShapeMismatch(DataError):
    """Array shapes disagree."""


class MissingField(DataError):
    """A record lacks a field required by the active template or stage."""
