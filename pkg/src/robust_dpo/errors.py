"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A hyperparameter or configuration value is out of its valid range."""


class DomainError(ValueError):
    """A numeric argument lies outside the mathematical domain of a function."""


class ShapeError(ValueError):
    """Two objects that must share a prompt/completion space do not."""


class OracleConvergenceError(RuntimeError):
    """An iterative oracle stopped before meeting its tolerance.

    The best iterate found is kept on ``best`` so callers can inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FiniteDifferenceError(RuntimeError):
    """A loss evaluation at a finite-difference probe point was not finite."""

    def __init__(self, message, coordinate):
        super().__init__(message)
        self.coordinate = coordinate


class TrainingDivergedError(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
