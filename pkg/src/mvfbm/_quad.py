"""Fixed-order Gauss rules on [0, 1] used by the singular-kernel quadratures.

All rules are returned in "weight function absorbed" form: for Jacobi
exponents (a, b),

    integral_0^1 (1-u)^a u^b f(u) du  ~=  sum_q w_q f(u_q),

so callers only ever evaluate the smooth factor of their integrand.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=256)
def gauss_legendre01(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(order)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=256)
def gauss_jacobi01(order: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights with the (1-u)^a u^b factor folded into the weights."""
    if a == 0.0 and b == 0.0:
        return gauss_legendre01(order)
    with np.errstate(invalid="ignore"):  # scipy's recurrence warns harmlessly at k=1
        x, w = roots_jacobi(order, a, b)
    return (x + 1.0) / 2.0, w / 2.0 ** (a + b + 1.0)
