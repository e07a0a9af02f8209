import logging

import numpy as np

from errors import ContractViolation, NumericDomainError

logger = logging.getLogger(__name__)


def finite_difference_gradient(f, x, h=1e-3, coordinates=None):
    """
    Central-difference gradient of a scalar field, evaluated in float64.

    :param f: callable taking an array shaped like x and returning a scalar.
    :param x: point of evaluation.
    :param h: step, > 0.
    :param coordinates: optional flat indices to check; the others are left at 0.
    :return: float64 array shaped like x.
    """
    if h <= 0:
        raise ContractViolation("finite difference step must be positive", h=h)
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    checked = range(flat.size) if coordinates is None else coordinates

    for j in checked:
        original = flat[j]
        flat[j] = original + h
        upper = float(f(x))
        flat[j] = original - h
        lower = float(f(x))
        flat[j] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericDomainError("non-finite function value during finite differencing", coordinate=int(j))
        grad.reshape(-1)[j] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """‖a − n‖ / max(‖a‖, ‖n‖, floor) over the flattened arrays."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)
