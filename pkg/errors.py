"""
Error hierarchy shared by every package.

Each error carries the CLI exit code it maps to and a machine-readable record
that `main.cmd_dispatch` prints to stderr.
"""


class AuditError(Exception):
    exit_code = 1

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_record(self):
        record = {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
        }
        for key, value in self.context.items():
            record[key] = value if isinstance(value, (str, int, float, bool, type(None))) else str(value)
        return record


# ---------- CONTRACT / USAGE (exit 2) ----------

class ContractViolation(AuditError, ValueError):
    exit_code = 2


class UsageError(ContractViolation):
    pass


class ContextLengthError(ContractViolation):
    pass


class TransferError(ContractViolation):
    pass


# ---------- MISSING PREREQUISITES (exit 3) ----------

class DependencyError(AuditError):
    exit_code = 3


# ---------- NUMERICS / TRAINING (exit 4) ----------

class NumericDomainError(AuditError, ArithmeticError):
    exit_code = 4


class DegenerateBasisError(NumericDomainError):
    pass


class TrainingDivergenceError(NumericDomainError):
    pass


class SaturationError(AuditError):
    exit_code = 4


class DatasetIntegrityError(AuditError):
    exit_code = 4


# ---------- ARTIFACT I/O (exit 5) ----------

class ArtifactIOError(AuditError, OSError):
    exit_code = 5


class WeightFormatError(ArtifactIOError):
    """Bad magic bytes, unknown format version or checksum mismatch."""


class WeightShapeError(ArtifactIOError):
    pass


class WeightTruncatedError(ArtifactIOError):
    pass
