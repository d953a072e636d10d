import numpy as np
import pytest

from vthead.gradcheck import grad_check
from vthead.matching import Logits, cross_entropy
from vthead.ops import softmax_rows


def test_quadratic_is_exact():
    # central differences are exact on quadratics up to float rounding
    err = grad_check(
        lambda t: float(t[0] ** 2),
        lambda t: np.array([2.0 * t[0]]),
        np.array([3.0]),
    )
    assert err < 1e-8


def test_softmax_cross_entropy_gradient_is_p_minus_onehot():
    rng = np.random.Generator(np.random.Philox(key=99))
    scores = rng.standard_normal((4, 5))
    labels = np.array([0, 3, 2, 2])

    _, dscores = cross_entropy(Logits(scores=scores.copy(), logit_scale=1.0), labels)
    onehot = np.zeros((4, 5))
    onehot[np.arange(4), labels] = 1.0
    assert np.allclose(dscores, (softmax_rows(scores) - onehot) / 4, atol=1e-12)

    def f(theta):
        loss, _ = cross_entropy(Logits(scores=theta.reshape(4, 5), logit_scale=1.0), labels)
        return loss

    def grad(theta):
        _, d = cross_entropy(Logits(scores=theta.reshape(4, 5), logit_scale=1.0), labels)
        return d.ravel()

    assert grad_check(f, grad, scores.ravel()) < 1e-6


def test_non_finite_objective_rejected():
    with pytest.raises(ValueError):
        grad_check(
            lambda t: float("nan"),
            lambda t: np.zeros_like(t),
            np.array([1.0]),
        )


def test_gradient_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        grad_check(
            lambda t: float(t.sum()),
            lambda t: np.zeros(3),
            np.array([1.0]),
        )
