"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when caller-supplied data or parameters violate a precondition."""


class TrainingError(RuntimeError):
    """Raised when model fitting diverges (e.g. a non-finite loss)."""


class StageError(RuntimeError):
    """Pipeline stage failure; carries the stage name for CLI reporting."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
