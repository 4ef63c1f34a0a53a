"""
Error types raised across the UCIP package
The command layer maps these onto process exit codes
"""


class UcipError(Exception):
    """Base class for every error raised by the package"""


class ShapeMismatchError(UcipError):
    """An op received operands whose shapes do not fit together"""

    def __init__(self, op, expected, got, detail=""):
        self.op = op
        self.expected = tuple(expected) if isinstance(expected, (list, tuple)) else expected
        self.got = tuple(got) if isinstance(got, (list, tuple)) else got
        message = f"{op}: shape mismatch, expected {self.expected} but got {self.got}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NumericOverflowError(UcipError):
    """An op produced NaN or Inf"""

    def __init__(self, op, count=None):
        self.op = op
        suffix = f" in {count} element(s)" if count is not None else ""
        super().__init__(f"{op}: non-finite result{suffix}")


class ConfigError(UcipError):
    """A configuration field failed validation"""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegradationError(UcipError):
    """Invalid codec, quality factor or image geometry"""


class DatasetError(UcipError):
    """Dataset construction or manifest problems"""


class OptimizerError(UcipError):
    """A registered parameter cannot be updated"""


class CheckpointError(UcipError):
    """Checkpoint file is unreadable or does not fit the model"""

    def __init__(self, message, names=()):
        self.names = list(names)
        super().__init__(message)


class TrainingAbort(UcipError):
    """Training stopped on a non-finite loss"""

    def __init__(self, iteration, provenance, reason="non-finite loss"):
        self.iteration = iteration
        self.provenance = provenance
        super().__init__(f"iteration {iteration}: {reason} (batch {provenance})")
