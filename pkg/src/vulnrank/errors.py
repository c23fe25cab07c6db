"""Exception hierarchy shared across the pipeline.

Each error class carries the process exit code the CLI maps it to.
"""


class VulnrankError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(VulnrankError):
    """Invalid configuration file, option value, or stale stage config."""

    exit_code = 2


class MissingArtifactError(VulnrankError):
    """A stage was invoked before the stage that produces its input."""

    exit_code = 3


class ContractViolation(VulnrankError):
    """Caller passed data that breaks a documented precondition."""

    exit_code = 4


class TrainingDiverged(VulnrankError):
    """Optimization produced a non-finite loss."""

    exit_code = 1
