import logging
from dataclasses import dataclass

import numpy as np

from errors import ContractViolation, DegenerateBasisError
from numerics.kernels import kernel_eval

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-5
RANK_TOLERANCE = 1e-8


def orthonormality_residual(columns):
    """Max-norm distance of columnsᵀ·columns from the identity (0 for an exact basis)."""
    columns = np.asarray(columns, dtype=np.float64)
    k = columns.shape[1]
    if k == 0:
        return 0.0
    return float(np.max(np.abs(columns.T @ columns - np.eye(k))))


@dataclass(frozen=True)
class OrthonormalBasis:
    """
    d×k matrix with orthonormal columns. k = 0 is the empty basis (identity intervention).
    """
    ambient_dim: int
    columns: np.ndarray

    def __post_init__(self):
        columns = np.array(self.columns, dtype=np.float32)
        if columns.ndim != 2 or columns.shape[0] != self.ambient_dim:
            raise ContractViolation("basis must be a d×k matrix",
                                    ambient_dim=self.ambient_dim, shape=list(columns.shape))
        if columns.shape[1] > self.ambient_dim:
            raise ContractViolation("basis has more columns than dimensions",
                                    ambient_dim=self.ambient_dim, k=columns.shape[1])
        residual = orthonormality_residual(columns)
        if residual > ORTHONORMAL_TOLERANCE:
            raise DegenerateBasisError("columns are not orthonormal", residual=residual)
        columns.flags.writeable = False
        object.__setattr__(self, "columns", columns)

    @property
    def k(self):
        return self.columns.shape[1]

    @classmethod
    def empty(cls, d):
        return cls(d, np.zeros((d, 0), dtype=np.float32))


def qr_orthonormalize(matrix):
    """
    Orthonormal basis of span(matrix), column signs fixed so that diag(R) ≥ 0.

    :raises DegenerateBasisError: when a column is (numerically) dependent on the previous ones.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0 or m.shape[1] > m.shape[0]:
        raise ContractViolation("qr_orthonormalize needs a d×k matrix with 1 ≤ k ≤ d",
                                shape=list(m.shape))
    if not np.all(np.isfinite(m)):
        raise DegenerateBasisError("matrix has non-finite entries")
    q, r = np.linalg.qr(m, mode="reduced")
    diag = np.diag(r)
    if np.min(np.abs(diag)) <= RANK_TOLERANCE:
        raise DegenerateBasisError("matrix is rank deficient",
                                   smallest_pivot=float(np.min(np.abs(diag))))
    signs = np.where(diag < 0, -1.0, 1.0)
    return OrthonormalBasis(m.shape[0], (q * signs).astype(np.float32))


def retract(matrix):
    """QR retraction back onto the orthonormal frames after an unconstrained step."""
    return qr_orthonormalize(matrix)


def cayley(skew):
    """Q = (I − S)(I + S)⁻¹ for skew-symmetric S."""
    return kernel_eval("cayley", np.asarray(skew)).data


def principal_angle_cosines(a, b):
    """Cosines of the principal angles between span(a) and span(b), largest first."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.linalg.svd(a.T @ b, compute_uv=False)
