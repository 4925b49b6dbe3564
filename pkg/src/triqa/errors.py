"""Exception taxonomy shared by the library and the CLI.

The CLI maps these onto process exit codes: usage problems exit 1, data
problems exit 2, numerical failures exit 3. Library code raises the most
specific class that applies and never calls sys.exit itself.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class TriqaError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_DATA


class UsageError(TriqaError):
    """Bad arguments or an invalid configuration supplied by the caller."""

    exit_code = EXIT_USAGE


class DataError(TriqaError):
    """Missing, malformed, degenerate, or inconsistent data."""

    exit_code = EXIT_DATA


class NumericalError(TriqaError):
    """Non-finite values or a numerically failed computation."""

    exit_code = EXIT_NUMERICAL
