"""Input validation helpers shared by the public entry points.

All numeric state in this package is held in float64 ndarrays; these
helpers coerce array-likes and enforce the two package-wide invariants:
declared shape and finiteness.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return check_finite(a, name)


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    return check_finite(a, name)


def check_dims_match(n_left: int, n_right: int, left: str, right: str) -> None:
    if n_left != n_right:
        raise ShapeError(f"{left}={n_left} does not match {right}={n_right}")
