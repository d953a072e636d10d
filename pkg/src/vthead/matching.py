"""Cosine similarity scoring, cross-entropy loss and prediction.

Features are L2-normalized before every dot product and the result is
multiplied by a fixed logit scale (the inverse softmax temperature of the
pretrained encoders, 100.0). Ties in argmax break toward the lowest class
index so accuracies are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .ops import normalize_rows, softmax_rows
from .validation import check_dims_match

DEFAULT_LOGIT_SCALE = 100.0


@dataclass
class Logits:
    scores: np.ndarray  # (B, K) pre-softmax similarities
    logit_scale: float

    def __post_init__(self):
        if self.logit_scale <= 0:
            raise ValueError("logit_scale must be positive")

    def probabilities(self) -> np.ndarray:
        return softmax_rows(self.scores)


def zero_shot_logits(
    v_c: np.ndarray, t_c: np.ndarray, logit_scale: float = DEFAULT_LOGIT_SCALE
) -> Logits:
    """Scores of global image features against shared class-text rows."""
    check_dims_match(v_c.shape[1], t_c.shape[1], "global feature dim", "text dim")
    scores = logit_scale * (normalize_rows(v_c, "global features")
                            @ normalize_rows(t_c, "text rows").T)
    return Logits(scores=scores, logit_scale=logit_scale)


def vt_logits(
    v_c: np.ndarray, vt_rows: np.ndarray, logit_scale: float = DEFAULT_LOGIT_SCALE
) -> Logits:
    """Scores of global features against per-image refined text rows.

    vt_rows has shape (B, K, D): one refined text matrix per image, since
    refinement depends on each image's spatial tokens.
    """
    if vt_rows.ndim != 3:
        raise ShapeError(f"vt_rows must be (B, K, D), got {vt_rows.shape}")
    if vt_rows.shape[0] != v_c.shape[0]:
        raise ShapeError(
            f"{v_c.shape[0]} global rows but {vt_rows.shape[0]} refined text matrices"
        )
    check_dims_match(v_c.shape[1], vt_rows.shape[2], "global feature dim", "text dim")
    u = normalize_rows(v_c, "global features")  # (B, D)
    norms = np.linalg.norm(vt_rows, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ShapeError("refined text rows contain a zero-norm row")
    w = vt_rows / norms  # (B, K, D)
    scores = logit_scale * np.einsum("bd,bkd->bk", u, w)
    return Logits(scores=scores, logit_scale=logit_scale)


def cross_entropy(logits: Logits, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the scores.

    Returns (loss, dscores) with dscores = (softmax(scores) - one_hot) / B.
    """
    scores = logits.scores
    b, k = scores.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape}, expected ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")

    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(b), labels]))

    dscores = softmax_rows(scores)
    dscores[np.arange(b), labels] -= 1.0
    dscores /= b
    return loss, dscores


def predict(logits: Logits) -> np.ndarray:
    """Row-wise argmax; ties break toward the lowest class index."""
    return np.argmax(logits.scores, axis=1)


def accuracy(predictions: np.ndarray, truth: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ShapeError(
            f"predictions shape {predictions.shape} != truth shape {truth.shape}"
        )
    return float(np.mean(predictions == truth))
