"""Exception types shared across the package.

The CLI maps these onto exit codes (see cli.py): configuration problems
exit 2, numeric-contract failures exit 3, data problems exit 4.
"""


class ReldetError(Exception):
    """Base class for all package errors."""


class DimensionError(ReldetError):
    """Array shapes violate an operation's contract (messages name the shapes)."""


class EmptyClipError(DimensionError):
    """An operation that needs at least one actor received none."""


class ValidationError(ReldetError):
    """Values violate a contract: NaN/Inf, labels outside {0,1}, bad ranges."""


class ConfigurationError(ReldetError):
    """Bad or inconsistent configuration, including checkpoint/config mismatches."""


class DataError(ReldetError):
    """Missing or unusable data: absent videos, empty datasets, no ground truth."""


class NumericsError(ReldetError):
    """Numerical failure at runtime, e.g. a diverged (NaN) training loss."""
