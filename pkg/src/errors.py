"""
Error types shared by every freegrain module.

InputError covers bad arguments, malformed files and schema mismatches,
NumericError covers non-finite values, StateError covers misuse of
stateful objects (e.g. a second backward pass without reset).
"""
from typing import Optional


class FreegrainError(Exception):
    """Base class for all freegrain errors"""


class InputError(FreegrainError, ValueError):
    """Invalid input; optionally located in a file at a given line"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class UnsupportedShapeError(InputError):
    """The operation does not support this taxonomy/dataset shape"""


class NumericError(FreegrainError, ArithmeticError):
    """A computation produced NaN or Inf"""

    def __init__(self, message: str, op: Optional[str] = None):
        self.op = op
        super().__init__(f"{op}: {message}" if op else message)


class StateError(FreegrainError, RuntimeError):
    """An object was used in a state that does not allow the operation"""
