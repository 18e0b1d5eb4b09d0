"""Exception types shared by the services and the CLI.

Each error carries the process exit code the CLI reports for it.
"""


class LabError(Exception):
    """Base class for laboratory failures."""

    exit_code = 2


class ConfigError(LabError, ValueError):
    """An experiment configuration failed validation."""

    exit_code = 1

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class DomainError(LabError, ValueError):
    """An operation received inputs outside its domain."""

    exit_code = 1


class NumericalError(LabError):
    """A computation became unstable or could not produce a number."""

    exit_code = 2


class AcceptanceError(LabError):
    """A reproduction experiment failed one of its checks."""

    exit_code = 3
