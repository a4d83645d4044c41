"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ProtoscopeError(Exception):
    exit_code = 1


class ConfigurationError(ProtoscopeError, ValueError):
    """Invalid parameters, specs or dataset shapes."""

    exit_code = 2


class DimensionError(ConfigurationError):
    pass


class NonFiniteError(ProtoscopeError, ArithmeticError):
    """A NaN or Inf appeared at an op boundary."""


class UsageError(ProtoscopeError, ValueError):
    pass


class FormatError(ProtoscopeError, ValueError):
    """Corrupt or incompatible serialized file."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{message} (field: {field})")
        self.field = field


class ParseError(ProtoscopeError, ValueError):
    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TrainingAbort(ProtoscopeError):
    exit_code = 3


class UndefinedSimilarity(ProtoscopeError, ValueError):
    """Cosine similarity requested for a (near-)zero vector."""


class StalledGradient(ProtoscopeError):
    """Input gradient norm collapsed; a normalized step is undefined."""

    def __init__(self, loss: float, norm: float):
        super().__init__(f"gradient norm {norm:.3e} below threshold (loss={loss:.6g})")
        self.loss = loss
        self.norm = norm


class EvaluationError(ProtoscopeError):
    exit_code = 4
