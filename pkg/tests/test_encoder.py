"""Encoder shapes, determinism, and gradient verification."""

import numpy as np
import pytest

from carl_lab import autodiff as ad
from carl_lab.autodiff import Tensor, backward, finite_difference_gradient, relative_error
from carl_lab.encoder import EncoderConfig, encoder_forward, encoder_init
from carl_lab.errors import ContractError, DimensionError

F64 = np.float64


class TestEncoderInit:
    def test_shape_chain(self):
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2))
        assert [w.shape for w in net.weights] == [(4, 3), (3, 2)]
        assert [b.shape for b in net.biases] == [(3,), (2,)]
        assert all(p.requires_grad for p in net.parameters())

    def test_same_seed_bit_identical(self):
        cfg = EncoderConfig(input_dim=6, hidden_dims=[5, 4], embedding_dim=3, seed=42)
        net1, net2 = encoder_init(cfg), encoder_init(cfg)
        for p1, p2 in zip(net1.parameters(), net2.parameters()):
            assert np.array_equal(p1.data, p2.data)

    def test_different_seeds_differ(self):
        cfg1 = EncoderConfig(input_dim=6, hidden_dims=[5], embedding_dim=3, seed=0)
        cfg2 = EncoderConfig(input_dim=6, hidden_dims=[5], embedding_dim=3, seed=1)
        w1 = encoder_init(cfg1).weights[0].data
        w2 = encoder_init(cfg2).weights[0].data
        assert not np.array_equal(w1, w2)

    def test_biases_zero(self):
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2))
        for b in net.biases:
            assert not b.data.any()

    def test_requires_hidden_layer(self):
        with pytest.raises(ContractError):
            EncoderConfig(input_dim=4, hidden_dims=[], embedding_dim=2)


class TestEncoderForward:
    def test_zero_network_gives_zero_embeddings(self):
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2))
        for w in net.weights:
            w.data[:] = 0.0
        out = encoder_forward(net, Tensor(np.random.default_rng(0).normal(size=(5, 4))))
        assert not out.data.any()
        assert out.shape == (5, 2)

    def test_identity_layers_give_rectified_input(self):
        net = encoder_init(EncoderConfig(input_dim=3, hidden_dims=[3], embedding_dim=3))
        for w in net.weights:
            w.data[:] = np.eye(3)
        x = np.array([[1.0, -2.0, 0.5], [-1.0, 3.0, -0.25]], dtype=np.float32)
        out = encoder_forward(net, Tensor(x))
        np.testing.assert_allclose(out.data, np.maximum(x, 0.0))

    def test_width_mismatch(self):
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2))
        with pytest.raises(DimensionError):
            encoder_forward(net, Tensor(np.zeros((2, 5))))

    def test_duplicated_rows_duplicate_outputs(self):
        net = encoder_init(EncoderConfig(input_dim=4, hidden_dims=[3], embedding_dim=2, seed=5))
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 4)).astype(np.float32)
        doubled = np.vstack([x, x])
        out = encoder_forward(net, Tensor(doubled)).data
        np.testing.assert_array_equal(out[:3], out[3:])

    def test_gradients_match_oracle(self):
        cfg = EncoderConfig(input_dim=3, hidden_dims=[4], embedding_dim=2, seed=7)
        rng = np.random.default_rng(2)
        x_val = rng.normal(size=(4, 3))

        def build(dtype=F64):
            net = encoder_init(cfg, dtype=dtype)
            return net

        net = build()
        out = encoder_forward(net, Tensor(x_val, dtype=F64))
        backward(ad.tensor_sum(out))
        params = net.parameters()
        analytic = np.concatenate([p.grad.ravel() for p in params])

        shapes = [p.shape for p in params]
        theta0 = np.concatenate([p.data.ravel() for p in params])

        def f(theta):
            probe = build()
            offset = 0
            for p, shape in zip(probe.parameters(), shapes):
                size = int(np.prod(shape))
                p.data = theta[offset:offset + size].reshape(shape).copy()
                offset += size
            with ad.no_grad():
                return float(encoder_forward(probe, Tensor(x_val, dtype=F64)).data.sum())

        numeric = finite_difference_gradient(f, theta0)
        assert relative_error(analytic, numeric) < 1e-4
