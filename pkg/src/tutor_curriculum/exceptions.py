"""
Exception hierarchy for the TutorNet curriculum framework

Every error raised on purpose by the package derives from
TutorCurriculumError so the CLI can map it to an exit code.
"""

from typing import Optional


class TutorCurriculumError(Exception):
    """Base class for all package errors"""


class ShapeMismatchError(TutorCurriculumError, ValueError):
    """Raised when two operands of an operation have incompatible shapes"""

    def __init__(self, operation: str, left: tuple, right: tuple):
        self.operation = operation
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(
            f"Shape mismatch in {operation}: {self.left} vs {self.right}"
        )


class ConfigurationError(TutorCurriculumError, ValueError):
    """Invalid configuration file, flag combination or parameter value"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class AnnotationParseError(TutorCurriculumError, ValueError):
    """Malformed scene, annotation or image file"""

    def __init__(self, path: str, message: str, line_number: Optional[int] = None):
        self.path = str(path)
        self.line_number = line_number
        location = f"{self.path}:{line_number}" if line_number is not None else self.path
        super().__init__(f"{location}: {message}")


class CheckpointError(TutorCurriculumError):
    """Missing, truncated or corrupt checkpoint file"""


class DivergenceError(TutorCurriculumError):
    """A training loss became non-finite or exceeded the divergence guard"""

    def __init__(
        self,
        quantity: str,
        value: float,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
    ):
        self.quantity = quantity
        self.value = value
        self.epoch = epoch
        self.step = step
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}, step {step}"
        super().__init__(f"Training diverged{where}: {quantity} = {value!r}")


class GradientCheckError(TutorCurriculumError):
    """One or more finite-difference gradient checks failed"""
