"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violated a documented precondition (shape, range, dtype)."""


class TrainingError(RuntimeError):
    """Training produced non-finite values or otherwise cannot continue."""


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable, corrupted, or of an unsupported version."""
