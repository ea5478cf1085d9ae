"""Error taxonomy shared by all modules.

Each class maps to a distinct CLI exit code (see cli.EXIT_CODES), so library
code should raise the most specific class that applies.
"""


class NlfbError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NlfbError):
    """Invalid parameters, malformed config files, or inconsistent setup."""


class DomainError(NlfbError):
    """An operation was asked outside its domain (empty ball, coincident points, ...)."""


class DataError(NlfbError):
    """Input data is unusable (non-finite values, too few usable samples, ...)."""


class SolverError(NlfbError):
    """An iterative solve failed to reach its tolerance within its budget."""


class CapacityError(NlfbError):
    """A problem exceeds a hard size limit of an exhaustive operation."""
