"""Exception types shared across the package.

The CLI maps these (plus the builtin ``ValueError`` / ``FileNotFoundError``)
to exit code 2; anything else is an internal failure (exit 1).
"""


class DimensionError(ValueError):
    """Grids or array shapes that are required to match do not."""


class FormatError(ValueError):
    """A file is malformed; the message names the offending field or token."""


class UnsupportedTypeError(FormatError):
    """A file uses a datatype code outside the supported subset."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value for this input (e.g. empty mask, zero mean)."""
