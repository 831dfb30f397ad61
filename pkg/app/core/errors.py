"""
Error types shared across the toolkit.

Each top-level family maps onto one CLI exit code (see models/config.py).
"""
from typing import Optional


class DegreeMixError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(DegreeMixError, ValueError):
    """Invalid configuration value, unknown key or bad flag."""


class DataError(DegreeMixError, ValueError):
    """Input data is missing, malformed or inconsistent."""


class ParseError(DataError):
    """A triple file line could not be parsed."""

    def __init__(self, path: str, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class CheckpointError(DataError):
    """A checkpoint file failed validation on load."""


class OutputExistsError(DataError):
    """Refusing to write into a non-empty output directory without force."""


class NumericalError(DegreeMixError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, batch: int, loss: Optional[float] = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
