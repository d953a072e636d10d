"""Finite-difference verification of hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np


def grad_check(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central finite differences.

    f maps a parameter vector to a scalar; grad returns the analytic
    gradient at the same point. Returns the worst relative error over all
    coordinates:

        max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|)
    """
    theta = np.asarray(theta, dtype=np.float64)
    analytic = np.asarray(grad(theta), dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ValueError(
            f"analytic gradient shape {analytic.shape} does not match theta {theta.shape}"
        )
    if not np.all(np.isfinite(analytic)):
        raise ValueError("analytic gradient is not finite")

    numeric = np.empty_like(theta)
    for i in range(theta.size):
        probe = theta.copy()
        probe[i] = theta[i] + step
        f_plus = float(f(probe))
        probe[i] = theta[i] - step
        f_minus = float(f(probe))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"objective is not finite near coordinate {i}")
        numeric[i] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
