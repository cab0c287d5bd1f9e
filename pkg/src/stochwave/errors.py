"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration; ``hypothesis`` names the violated assumption when there is one."""

    def __init__(self, message: str, hypothesis: str | None = None):
        self.hypothesis = hypothesis
        if hypothesis:
            message = f"[{hypothesis}] {message}"
        super().__init__(message)


class BlowUpError(FloatingPointError):
    """A time-marching solve produced non-finite values."""

    def __init__(self, step: int, what: str = "solution"):
        self.step = step
        super().__init__(f"{what} became non-finite at step {step}")
