"""Exception types shared across the package."""


class RobustPTError(Exception):
    """Base class for all package errors."""


class ContractError(RobustPTError):
    """A caller violated an operation's precondition (shape, state, arity)."""


class ShapeError(ContractError):
    """Operand shapes do not compose."""


class DomainError(RobustPTError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ConfigError(RobustPTError, ValueError):
    """Invalid or unknown configuration key/value.

    ``key`` names the offending entry so the CLI can report it.
    """

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


class NumericalAbort(RobustPTError):
    """Training produced a non-finite quantity and was stopped."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class UnsupportedModeError(ContractError):
    """The operation has no exact form for this input (e.g. a nonlinear policy)."""
