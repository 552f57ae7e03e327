"""Exception hierarchy shared across the simulator."""


class AimcError(Exception):
    """Base class for all simulator errors."""


class ShapeError(AimcError, ValueError):
    """Tensor or layer dimensions do not agree."""


class MappingError(AimcError, ValueError):
    """A weight block cannot be placed on the requested tile geometry."""


class ConfigError(AimcError, ValueError):
    """Invalid or inconsistent configuration."""


class TrainingError(AimcError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step
