"""
Exception hierarchy for zubov_clf.

Every error raised on purpose by the package derives from ZubovError so the
CLI can map failures to exit codes in one place (see main.py).
"""

from typing import Optional


class ZubovError(Exception):
    """Base exception for all zubov_clf errors."""
    pass


# ----------------------------------------------------------------------------
# Expressions
# ----------------------------------------------------------------------------

class ExpressionSyntaxError(ZubovError):
    """Raised when an expression string cannot be parsed."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownIdentifierError(ExpressionSyntaxError):
    """Raised when an identifier is neither a declared variable nor a function."""
    pass


class ArityError(ExpressionSyntaxError):
    """Raised when a variable index exceeds the declared arity."""
    pass


class ExpressionEvaluationError(ZubovError):
    """Raised on division by zero or sqrt of a negative number."""
    pass


class EnclosureError(ZubovError):
    """Raised when an interval enclosure is undefined (e.g. 1/[-1, 1])."""
    pass


# ----------------------------------------------------------------------------
# Models and numerics
# ----------------------------------------------------------------------------

class SystemDefinitionError(ZubovError):
    """Raised when a control-affine system or cost is malformed."""
    pass


class UnknownBenchmarkError(SystemDefinitionError):
    """Raised for a benchmark name that is not registered."""
    pass


class RiccatiError(ZubovError):
    """Raised when the algebraic Riccati equation has no stabilizing solution."""
    pass


class TransformError(ZubovError):
    """Raised when the value transform receives an invalid argument."""
    pass


class TPBVPError(ZubovError):
    """Raised for invalid boundary value problem arguments."""
    pass


class TrainingDivergedError(ZubovError):
    """Raised when the training loss becomes NaN or infinite."""

    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(
            f"training diverged at epoch {epoch}, step {step} (loss={loss})"
        )
        self.epoch = epoch
        self.step = step
        self.loss = loss


class SimulationError(ZubovError):
    """Raised when a closed-loop simulation cannot be carried out."""
    pass


# ----------------------------------------------------------------------------
# Verification
# ----------------------------------------------------------------------------

class VerificationError(ZubovError):
    """Base class for verification failures."""
    pass


class CertificateRejectedError(VerificationError):
    """Raised when no level of a quadratic certificate can be verified."""
    pass


class NeuralVerificationError(VerificationError):
    """Raised when the neural CLF cannot be certified at any level."""
    pass


class SmtEmissionError(VerificationError):
    """Raised when a condition cannot be expressed in the requested logic."""
    pass


# ----------------------------------------------------------------------------
# Configuration and orchestration
# ----------------------------------------------------------------------------

class ConfigError(ZubovError):
    """Raised for invalid or missing configuration."""
    pass


class PipelineStageError(ZubovError):
    """Raised when a pipeline stage fails; carries the stage name."""

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        message = f"stage '{stage}' failed"
        if cause is not None:
            message += f": {cause}"
        super().__init__(message)
        self.stage = stage
        self.cause = cause
