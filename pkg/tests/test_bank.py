import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from vthead.bank import SynthConfig, sample_shots, subset_bank, synth_bank
from vthead.errors import ConfigError, ShotSamplingError
from vthead.matching import accuracy, predict, zero_shot_logits


@pytest.fixture(scope="module")
def acceptance_cfg():
    # the canonical desk-scale dataset: 10 classes, 16x4x4 grid tokens
    return SynthConfig(seed=7)


@pytest.fixture(scope="module")
def acceptance_data(acceptance_cfg):
    return synth_bank(acceptance_cfg)


class TestSynth:
    def test_same_seed_is_bit_identical(self):
        cfg = SynthConfig(num_classes=4, images_per_class_train=3,
                          images_per_class_test=2, seed=42)
        a_train, a_test, a_texts = synth_bank(cfg)
        b_train, b_test, b_texts = synth_bank(cfg)
        assert np.array_equal(a_train.global_features, b_train.global_features)
        assert np.array_equal(a_train.spatial_features, b_train.spatial_features)
        assert np.array_equal(a_test.spatial_features, b_test.spatial_features)
        assert np.array_equal(a_texts.rows, b_texts.rows)

    def test_different_seed_differs(self):
        a, _, _ = synth_bank(SynthConfig(seed=1))
        b, _, _ = synth_bank(SynthConfig(seed=2))
        assert not np.array_equal(a.global_features, b.global_features)

    def test_label_histogram(self, acceptance_data, acceptance_cfg):
        train, test, _ = acceptance_data
        for bank, per_class in (
            (train, acceptance_cfg.images_per_class_train),
            (test, acceptance_cfg.images_per_class_test),
        ):
            counts = np.bincount(bank.labels, minlength=bank.num_classes)
            assert np.all(counts == per_class)

    def test_shapes_and_grid(self, acceptance_data):
        train, _, texts = acceptance_data
        assert train.global_features.shape == (160, 32)
        assert train.spatial_features.shape == (160, 16, 48)
        assert train.grid_h * train.grid_w == train.num_tokens
        assert texts.rows.shape == (10, 32)

    def test_informative_tokens_must_fit(self):
        with pytest.raises(ConfigError):
            SynthConfig(num_tokens=4, informative_tokens=5).validate()

    def test_bad_noise_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(noise_sigma=0.0).validate()
        with pytest.raises(ConfigError):
            SynthConfig(class_signal=1.5).validate()

    def test_grid_must_match_tokens(self):
        with pytest.raises(ConfigError):
            SynthConfig(num_tokens=16, grid_h=3, grid_w=4).validate()

    def test_zero_shot_is_chance_level(self, acceptance_data):
        # texts carry no usable signal about the global features: accuracy
        # stays within 5 points of 1/K on the 1000-image test split
        _, test, texts = acceptance_data
        logits = zero_shot_logits(test.global_features, texts.rows)
        acc = accuracy(predict(logits), test.labels)
        assert abs(acc - 0.1) <= 0.05

    def test_linear_probe_separates_classes(self, acceptance_data):
        # independent oracle: pooled spatial tokens are linearly separable,
        # so any failure to learn is the head's fault, not the data's
        train, test, _ = acceptance_data
        probe = LogisticRegression(max_iter=2000)
        probe.fit(train.spatial_features.mean(axis=1), train.labels)
        score = probe.score(test.spatial_features.mean(axis=1), test.labels)
        assert score >= 0.99

    def test_record_accessor(self, acceptance_data):
        train, _, _ = acceptance_data
        rec = train.record(17)
        assert rec.label == int(train.labels[17])
        assert np.shares_memory(rec.global_feature, train.global_features)
        assert rec.spatial_tokens.shape == (16, 48)

    def test_values_stored_on_f32_grid(self, acceptance_data):
        train, _, _ = acceptance_data
        g32 = train.global_features.astype(np.float32).astype(np.float64)
        assert np.array_equal(g32, train.global_features)


class TestSampleShots:
    def test_one_shot_gives_one_index_per_class(self, acceptance_data):
        train, _, _ = acceptance_data
        idx = sample_shots(train, 1, seed=0)
        assert idx.shape == (10,)
        assert sorted(train.labels[idx]) == list(range(10))

    def test_deterministic(self, acceptance_data):
        train, _, _ = acceptance_data
        a = sample_shots(train, 4, seed=5)
        b = sample_shots(train, 4, seed=5)
        assert np.array_equal(a, b)
        c = sample_shots(train, 4, seed=6)
        assert not np.array_equal(a, c)

    def test_sorted_by_class_then_index(self, acceptance_data):
        train, _, _ = acceptance_data
        idx = sample_shots(train, 4, seed=5)
        keys = list(zip(train.labels[idx], idx))
        assert keys == sorted(keys)

    def test_without_replacement(self, acceptance_data):
        train, _, _ = acceptance_data
        idx = sample_shots(train, 16, seed=3)
        assert len(set(idx.tolist())) == len(idx) == 160

    def test_insufficient_images_names_class(self, acceptance_data):
        train, _, _ = acceptance_data
        with pytest.raises(ShotSamplingError, match="class 0"):
            sample_shots(train, 17, seed=0)

    def test_subset_bank(self, acceptance_data):
        train, _, _ = acceptance_data
        idx = sample_shots(train, 2, seed=1)
        sub = subset_bank(train, idx)
        assert sub.num_images == 20
        assert np.array_equal(sub.labels, train.labels[idx])
        assert sub.num_classes == train.num_classes
