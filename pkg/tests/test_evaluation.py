"""Feature extraction, linear probes, and cluster diagnostics."""

import numpy as np
import pytest

from carl_lab.autodiff import parameters_checksum
from carl_lab.data import generate_gaussian_mixture
from carl_lab.encoder import EncoderConfig, encoder_init
from carl_lab.errors import ContractError, DimensionError
from carl_lab.evaluation import (cluster_diagnostics, extract_features,
                                 top1_accuracy, train_linear_probe)


class TestExtractFeatures:
    def test_zero_encoder_gives_zero_features(self):
        ds = generate_gaussian_mixture(2, 10, 4, 2.0, seed=0)
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2))
        for w in net.weights:
            w.data[:] = 0.0
        feats = extract_features(net, ds)
        assert feats.shape == (20, 2)
        assert not feats.any()

    def test_duplicate_samples_duplicate_features(self):
        ds = generate_gaussian_mixture(2, 10, 4, 2.0, seed=1)
        ds.samples[1] = ds.samples[0]
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2, seed=2))
        feats = extract_features(net, ds)
        np.testing.assert_array_equal(feats[0], feats[1])

    def test_encoder_untouched_checksum(self):
        ds = generate_gaussian_mixture(2, 30, 4, 2.0, seed=2)
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2, seed=3))
        before = parameters_checksum(net.parameters())
        extract_features(net, ds, batch_size=7)
        assert parameters_checksum(net.parameters()) == before

    def test_dimension_mismatch(self):
        ds = generate_gaussian_mixture(2, 5, 6, 2.0, seed=0)
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2))
        with pytest.raises(DimensionError):
            extract_features(net, ds)


class TestTop1Accuracy:
    def test_identical(self):
        assert top1_accuracy(np.array([1, 2, 3]), np.array([1, 2, 3])) == 1.0

    def test_disjoint(self):
        assert top1_accuracy(np.array([0, 0]), np.array([1, 1])) == 0.0

    def test_three_quarters(self):
        assert top1_accuracy(np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0])) == 0.75

    def test_permutation_invariant_to_example_order(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 4, size=100)
        labels = rng.integers(0, 4, size=100)
        base = top1_accuracy(preds, labels)
        perm = rng.permutation(100)
        assert top1_accuracy(preds[perm], labels[perm]) == base

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            top1_accuracy(np.array([1]), np.array([1, 2]))


class TestTrainLinearProbe:
    def test_separable_features(self):
        rng = np.random.default_rng(3)
        n = 200
        features = np.concatenate([
            rng.normal(size=(n, 4)) + np.array([5, 0, 0, 0]),
            rng.normal(size=(n, 4)) - np.array([5, 0, 0, 0]),
        ]).astype(np.float32)
        labels = np.array([0] * n + [1] * n)
        result = train_linear_probe(features, labels, epochs=30, lr=0.03, seed=0)
        assert result.top1_accuracy >= 0.99
        assert len(result.per_class_accuracy) == 2

    def test_shuffled_labels_score_chance(self):
        rng = np.random.default_rng(4)
        features = rng.normal(size=(2000, 8)).astype(np.float32)
        labels = rng.integers(0, 4, size=2000)
        result = train_linear_probe(features, labels, epochs=20, lr=0.03, seed=1)
        assert abs(result.top1_accuracy - 0.25) < 0.05

    def test_raw_features_on_separated_mixture(self):
        ds = generate_gaussian_mixture(8, 200, 32, 6.0, seed=9431)
        result = train_linear_probe(ds.samples, ds.labels, epochs=50, lr=0.03, seed=0)
        assert result.top1_accuracy >= 0.95

    def test_official_split_arguments(self):
        rng = np.random.default_rng(5)
        train = (rng.normal(size=(100, 3)) + np.array([[3, 0, 0]])).astype(np.float32)
        train2 = (rng.normal(size=(100, 3)) - np.array([[3, 0, 0]])).astype(np.float32)
        test = np.array([[3.0, 0, 0], [-3.0, 0, 0]], dtype=np.float32)
        result = train_linear_probe(
            np.concatenate([train, train2]), np.array([0] * 100 + [1] * 100),
            epochs=20, lr=0.03, seed=0,
            eval_features=test, eval_labels=np.array([0, 1]))
        assert result.top1_accuracy == 1.0

    def test_single_class_split_rejected(self):
        features = np.zeros((10, 2), dtype=np.float32)
        labels = np.zeros(10, dtype=np.int64)
        with pytest.raises(ContractError):
            train_linear_probe(features, labels, epochs=1, seed=0)


class TestClusterDiagnostics:
    def test_all_on_prototype_zero(self):
        n, K = 12, 4
        p = np.zeros((n, K))
        p[:, 0] = 1.0
        labels = np.arange(n) % 2
        diag = cluster_diagnostics(p, labels)
        assert diag["usage"].tolist() == [n, 0, 0, 0]
        assert diag["perplexity"] == 1.0

    def test_assignments_equal_to_labels_purity_one(self):
        labels = np.array([0, 1, 2, 3] * 5)
        p = np.zeros((20, 4))
        p[np.arange(20), labels] = 1.0
        diag = cluster_diagnostics(p, labels)
        assert diag["purity"] == 1.0

    def test_random_assignments_purity_half(self):
        rng = np.random.default_rng(6)
        n, K = 4000, 4
        labels = rng.integers(0, 2, size=n)
        p = rng.dirichlet(np.ones(K), size=n)
        diag = cluster_diagnostics(p, labels)
        assert abs(diag["purity"] - 0.5) < 0.05

    def test_purity_bounds(self):
        rng = np.random.default_rng(7)
        p = rng.dirichlet(np.ones(5), size=300)
        labels = rng.integers(0, 3, size=300)
        diag = cluster_diagnostics(p, labels)
        assert 1 / 3 - 0.05 <= diag["purity"] <= 1.0

    def test_argmax_tie_goes_to_lowest_index(self):
        p = np.array([[0.5, 0.5]])
        diag = cluster_diagnostics(p, np.array([0]))
        assert diag["usage"].tolist() == [1, 0]
