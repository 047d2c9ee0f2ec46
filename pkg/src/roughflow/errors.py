"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, DivergenceError -> 3,
InfeasibleError -> 4.
"""


class RoughflowError(Exception):
    """Base class for all package errors."""


class ParameterError(RoughflowError, ValueError):
    """A function argument violates a documented precondition."""


class ConfigError(RoughflowError):
    """An experiment configuration failed schema validation.

    ``field`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DivergenceError(RoughflowError):
    """A numerical integration produced a non-finite or capped state."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class InfeasibleError(RoughflowError):
    """A constrained optimization could not reach the feasibility tolerance."""


class ResourceError(RoughflowError):
    """A requested computation would exceed the configured resource budget."""
