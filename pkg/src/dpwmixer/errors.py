"""Exception types shared across the package.

Each error family maps to a CLI exit code (see :mod:`dpwmixer.cli`).
"""


class DpwError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(DpwError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 2


class DimensionError(ContractError):
    """Operand shapes are incompatible or an axis/index is out of range."""


class ConfigError(ContractError):
    """Invalid model, training or CLI configuration."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(DpwError):
    """Input data could not be ingested or does not fit the configuration."""

    exit_code = 3


class DivergenceError(DpwError, ArithmeticError):
    """A non-finite value appeared during training or a debug-checked op."""

    exit_code = 4
