#!/usr/bin/env python3
"""
Error types for the calibration lab
Every failure raised by the library derives from CalibLabError so the harness
can record it per run and keep going
"""

from typing import Optional


class CalibLabError(Exception):
    """Base class for all lab errors"""


class ContractViolation(CalibLabError, ValueError):
    """A precondition on shapes, ranges or arguments was not met"""


class DomainError(ContractViolation):
    """A numeric input is outside the domain of the operation"""


class CsvParseError(CalibLabError):
    """A CSV cell could not be parsed"""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(f"{message} (row {row}, column {column!r})")
        self.row = row
        self.column = column
        self._message = message

    def __reduce__(self):
        return type(self), (self._message, self.row, self.column)


class TrainingDivergence(CalibLabError):
    """Loss became non-finite during training"""

    def __init__(self, epoch: int, member: Optional[int] = None, detail: str = ""):
        where = f"epoch {epoch}" if member is None else f"member {member}, epoch {epoch}"
        super().__init__(f"training diverged at {where}" + (f": {detail}" if detail else ""))
        self.epoch = epoch
        self.member = member
        self.detail = detail

    def __reduce__(self):
        return type(self), (self.epoch, self.member, self.detail)


class FitError(CalibLabError):
    """A post-hoc calibrator could not be fitted"""


class ConfigError(CalibLabError):
    """Experiment configuration is invalid"""


class InvariantViolation(CalibLabError, AssertionError):
    """A mathematical invariant asserted by the code did not hold"""
