"""Small compiled helpers shared by the learning kernels."""

import numba


@numba.njit(cache=True)
def discount_pow(gamma, k):
    """``gamma**k`` by repeated multiplication, identical in and out of numba."""
    g = 1.0
    for _ in range(k):
        g *= gamma
    return g
