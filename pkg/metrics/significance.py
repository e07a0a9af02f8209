import logging
import math

import numpy as np
from scipy import stats

import config
from errors import ContractViolation

logger = logging.getLogger(__name__)


def welch_t_test(a, b):
    """
    Two-sided unpaired t-test with unequal variances.

    Both samples constant: p = 1 when they agree, 0 otherwise (the statistic is unbounded).

    :raises ContractViolation: a sample has fewer than two values.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ContractViolation("Welch test needs at least two values per sample", n_a=a.size, n_b=b.size)
    if a.var() == 0 and b.var() == 0:
        return 1.0 if a.mean() == b.mean() else 0.0
    # Canonical argument order keeps p(a, b) == p(b, a) bit for bit.
    if (a.mean(), tuple(a)) > (b.mean(), tuple(b)):
        a, b = b, a
    _, p = stats.ttest_ind(a, b, equal_var=False)
    if math.isnan(p):
        return 1.0
    return float(min(max(p, 0.0), 1.0))


def pairwise_p_matrix(samples):
    """
    4×4 symmetric matrix of Welch p-values between per-race samples, None on the diagonal.

    :param samples: {race: sequence of per-trial rates}, races in roster order.
    """
    races = config.RACES
    matrix = [[None] * len(races) for _ in races]
    for i, first in enumerate(races):
        for j in range(i + 1, len(races)):
            p = welch_t_test(samples[first], samples[races[j]])
            matrix[i][j] = matrix[j][i] = p
    return matrix
