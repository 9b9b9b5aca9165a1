"""Exception types shared across the package."""


class SpmkitError(Exception):
    """Base class for all spmkit errors."""


class ShapeError(SpmkitError, ValueError):
    """Operands have incompatible dimensions."""


class DomainError(SpmkitError, ValueError):
    """An argument is outside the operation's domain."""


class EmptySetError(SpmkitError, ValueError):
    """An inputted set became empty after exclusion or deletion."""


class ConditioningError(SpmkitError, ValueError):
    """No set element can serve the requested conditioning class."""


class StratificationError(SpmkitError, ValueError):
    """A class is too small to stratify the requested split."""


class EvaluationError(SpmkitError, ArithmeticError):
    """A function evaluated to a non-finite value during checking."""


class TrainingDivergenceError(SpmkitError, RuntimeError):
    """The training loss became non-finite."""


class ValidationError(SpmkitError, ValueError):
    """An experiment config failed validation.

    ``field`` names the offending config entry for machine-readable reports.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
