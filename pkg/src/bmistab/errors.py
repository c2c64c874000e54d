"""Exception types shared across the package."""


class BmistabError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(BmistabError, ValueError):
    """An array has the wrong shape or inconsistent dimensions."""


class RankDeficiencyError(BmistabError, ValueError):
    """A matrix expected to have full column rank does not."""

    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"matrix is rank deficient at column {column}")


class ConvergenceError(BmistabError, RuntimeError):
    """An iterative routine exceeded its iteration cap."""

    def __init__(self, iterations: int, message: str | None = None):
        self.iterations = iterations
        super().__init__(message or f"did not converge within {iterations} iterations")


class EvaluationError(BmistabError, RuntimeError):
    """A function evaluation produced a non-finite value."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"non-finite value at parameter index {index}")


class NotPositiveDefiniteError(BmistabError, ValueError):
    """A covariance matrix is not positive definite."""

    def __init__(self, which: str, message: str | None = None):
        self.which = which
        super().__init__(message or f"{which} covariance is not positive definite")


class MissingTargetError(BmistabError, ValueError):
    """A reach target has no trials to average."""

    def __init__(self, target: int, message: str | None = None):
        self.target = target
        super().__init__(message or f"no trials found for target {target}")


class InsufficientDataError(BmistabError, ValueError):
    """Too few samples for the requested statistical fit."""


class TrainingDivergedError(BmistabError, RuntimeError):
    """A training loop produced a non-finite loss."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class DegenerateSessionError(BmistabError, ValueError):
    """A drift specification would leave no usable channels."""


class ConfigError(BmistabError, ValueError):
    """A run configuration is malformed."""
