"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes: configuration problems exit 2,
data validation problems exit 3, numeric failures exit 4.
"""


class MffError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MffError):
    """A config object or flag combination is invalid."""


class DataValidationError(MffError):
    """An input record, file, or array violates its contract."""


class NumericError(MffError):
    """A computation produced non-finite values (e.g. NaN loss)."""
