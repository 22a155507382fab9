"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """A tensor shape or dimension constraint was violated."""


class ScheduleError(ValueError):
    """Noise-schedule parameters are invalid."""


class ConfigError(ValueError):
    """A run configuration field is invalid; carries the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


class SamplingError(RuntimeError):
    """A reverse-diffusion step failed; carries the step index and timestep."""

    def __init__(self, step: int, t: int, cause: BaseException):
        super().__init__(f"step {step} (t={t}): {cause}")
        self.step = step
        self.t = t
        self.cause = cause
