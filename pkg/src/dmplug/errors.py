"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates an operation's shape or range precondition."""


class DomainError(ValueError):
    """A numerical operand falls outside the function's domain."""


class TrainingError(RuntimeError):
    """Score-network training diverged."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class OptimizerError(RuntimeError):
    """An optimizer received unusable gradients."""

    def __init__(self, message, group):
        super().__init__(f"{message} (group {group!r})")
        self.group = group


class SolveError(RuntimeError):
    """A solve aborted; ``trace`` holds the iterations completed so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FormatError(ValueError):
    """A checkpoint or image file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """An experiment configuration is malformed."""
