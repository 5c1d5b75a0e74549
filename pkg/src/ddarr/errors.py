"""Exception hierarchy shared by all ddarr modules."""


class DdarrError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DdarrError, ValueError):
    """A value violates the documented range of its type."""


class DegenerateInputError(ValidationError):
    pass


class MissingVariableError(DdarrError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class NameCollisionError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class InsufficientSamplesError(InsufficientDataError):
    pass


class SchemaError(ValidationError):
    pass


class UndefinedScoreError(ValidationError):
    """R² is undefined because the reference series has zero variance."""


class DegenerateLabelsError(ValidationError):
    pass


class BudgetExceededError(DdarrError, RuntimeError):
    pass


class ConfigurationError(DdarrError):
    pass
