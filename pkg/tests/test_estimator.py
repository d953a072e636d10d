import numpy as np
import pytest
from sklearn.base import clone

from vthead.bank import SynthConfig, synth_bank
from vthead.estimator import VTClassifier
from vthead.trainer import TrainConfig, param_checksum, train


@pytest.fixture(scope="module")
def data():
    cfg = SynthConfig(
        num_classes=5,
        global_dim=16,
        spatial_dim=12,
        num_tokens=8,
        images_per_class_train=4,
        images_per_class_test=10,
        informative_tokens=2,
        seed=13,
    )
    return synth_bank(cfg)


def test_get_set_params_roundtrip():
    est = VTClassifier(n_shots=4, lr=1e-3, heads=4)
    params = est.get_params()
    assert params["n_shots"] == 4 and params["lr"] == 1e-3 and params["heads"] == 4
    est.set_params(epochs=7)
    assert est.epochs == 7


def test_clone_preserves_hyperparameters():
    est = VTClassifier(n_shots=2, epochs=5, seed=11)
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    assert not hasattr(copy, "params_")


def test_fit_predict_score(data):
    train_bank, test_bank, texts = data
    est = VTClassifier(n_shots=2, epochs=5, batch_size=8, seed=5)
    assert est.fit(train_bank, texts) is est
    assert np.array_equal(est.classes_, np.arange(5))
    preds = est.predict(test_bank)
    assert preds.shape == (test_bank.num_images,)
    assert set(preds.tolist()) <= set(range(5))
    assert est.score(test_bank) == np.mean(preds == test_bank.labels)
    scores = est.decision_function(test_bank)
    assert scores.shape == (test_bank.num_images, 5)


def test_fit_matches_trainer(data):
    train_bank, _, texts = data
    est = VTClassifier(n_shots=2, epochs=4, batch_size=8, seed=9).fit(train_bank, texts)
    params, _ = train(
        train_bank, texts, TrainConfig(n_shots=2, epochs=4, batch_size=8, seed=9)
    )
    assert param_checksum(est.params_) == param_checksum(params)


def test_unfitted_predict_rejected(data):
    _, test_bank, _ = data
    with pytest.raises(RuntimeError):
        VTClassifier().predict(test_bank)
