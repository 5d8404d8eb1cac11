"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to, so the runner can translate
failures without a lookup table.
"""


class FermiKineticsError(Exception):
    exit_code = 1


class ConfigError(FermiKineticsError):
    """Invalid parameters or configuration text."""

    exit_code = 2

    def __init__(self, message, errors=None):
        super().__init__(message)
        # list of (line number or None, message) pairs from the config parser
        self.errors = list(errors or [])


class ContractError(FermiKineticsError):
    """A caller violated a precondition (grid mismatch, off-shell input...)."""

    exit_code = 2


class DomainError(FermiKineticsError):
    """Inputs outside the mathematical domain of an operation."""

    exit_code = 2


class ResourceError(FermiKineticsError):
    """A configured size or loop budget would be exceeded."""

    exit_code = 2


class NumericalError(FermiKineticsError):
    """Non-finite values or broken invariants during a computation."""

    exit_code = 3


class ConvergenceError(FermiKineticsError):
    """An iterative procedure failed to converge.

    ``last`` holds the last valid intermediate result when one exists.
    """

    exit_code = 4

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last
