"""Dense matrix primitives with hand-derived backward passes.

Every forward here has a matching ``*_backward`` whose output is the exact
gradient of the forward under the chain rule; each pair is validated by
finite differences in the test suite. All computation is float64.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateFeatureError, ShapeError


def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise linear map ``x @ w + b``.

    x: (n, d_in), w: (d_in, d_out), b: (d_out,).
    """
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: x has shape {x.shape}, w has shape {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: b has shape {b.shape}, w has shape {w.shape}")
    return x @ w + b


def affine_backward(d_out: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients of affine: returns (dx, dw, db) for upstream d_out (n, d_out)."""
    dx = d_out @ w.T
    dw = x.T @ d_out
    db = d_out.sum(axis=0)
    return dx, dw, db


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, with max subtraction for stability.

    Output rows are nonnegative and sum to 1 to within 1e-12.
    """
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(d_out: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows given its output ``probs``.

    dx_i = p_i * (d_i - sum_j p_j d_j), row-wise.
    """
    inner = (d_out * probs).sum(axis=-1, keepdims=True)
    return probs * (d_out - inner)


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Per-row normalization followed by an affine: gamma * x_hat + beta.

    Uses population variance; eps sits inside the square root so
    constant rows map to beta.
    """
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    x_hat = (x - mean) / np.sqrt(var + eps)
    return x_hat * gamma + beta


def layer_norm_backward(
    d_out: np.ndarray, x: np.ndarray, gamma: np.ndarray, eps: float = 1e-5
):
    """Gradients of layer_norm: returns (dx, dgamma, dbeta)."""
    d = x.shape[-1]
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std

    dgamma = (d_out * x_hat).sum(axis=tuple(range(d_out.ndim - 1)))
    dbeta = d_out.sum(axis=tuple(range(d_out.ndim - 1)))

    dx_hat = d_out * gamma
    # Population-variance layer norm backward, derived per row:
    dx = inv_std * (
        dx_hat
        - dx_hat.mean(axis=-1, keepdims=True)
        - x_hat * (dx_hat * x_hat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return d_out * (x > 0.0)


def normalize_rows(x: np.ndarray, name: str = "features") -> np.ndarray:
    """L2-normalize each row. Zero-norm rows are degenerate and rejected."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateFeatureError(f"{name} has a zero-norm row")
    return x / norms


def normalize_row_backward(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Backward of y = x / ||x|| for a single row vector x."""
    r = np.linalg.norm(x)
    y = x / r
    return (d_out - np.dot(d_out, y) * y) / r
