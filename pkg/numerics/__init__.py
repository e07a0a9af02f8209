from numerics.tensor import Tensor, TapeNode, Tape, constant, backward
from numerics.kernels import KERNELS, kernel_eval
from numerics.linalg import (
    OrthonormalBasis,
    cayley,
    orthonormality_residual,
    principal_angle_cosines,
    qr_orthonormalize,
    retract,
)
from numerics.gradcheck import finite_difference_gradient, relative_error
from numerics.optim import Adam, LinearWarmupSchedule
