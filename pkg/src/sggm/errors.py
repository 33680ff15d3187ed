"""Exception types raised across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class DomainError(ValueError):
    """Input lies outside the domain an operation is defined on."""


class GenerationError(RuntimeError):
    """Random graph construction failed after its retry budget."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, step=None, lr=None):
        super().__init__(message)
        self.step = step
        self.lr = lr


class SamplingError(RuntimeError):
    """Reverse-process state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """An experiment configuration or output location is unusable."""
