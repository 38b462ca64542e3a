"""Exception hierarchy shared across the package.

Three bases drive the CLI exit-code mapping: ``UsageError`` -> 1,
``DataError`` -> 2, ``NumericalError`` -> 3.  Concrete exceptions live next
to the operations that raise them and inherit from one of these.
"""


class LeaderlensError(Exception):
    """Base class for all package-specific errors."""


class UsageError(LeaderlensError):
    """Bad invocation: unknown options, malformed config, missing files."""


class DataError(LeaderlensError):
    """Input data violates a contract (missing columns, empty snapshots...)."""


class NumericalError(LeaderlensError):
    """A numeric routine failed to converge or left its valid domain."""
