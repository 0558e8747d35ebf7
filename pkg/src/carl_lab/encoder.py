"""Fully-connected encoder mapping flattened inputs to embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [512, 512])
    embedding_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.embedding_dim < 1:
            raise ContractError("input and embedding dims must be positive")
        if len(self.hidden_dims) < 1 or any(h < 1 for h in self.hidden_dims):
            raise ContractError("need at least one positive hidden dim")


@dataclass
class EncoderNetwork:
    """Affine->rectifier stack; weights and biases all track gradients."""

    weights: list[Tensor]
    biases: list[Tensor]
    config: EncoderConfig

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params


def encoder_init(cfg: EncoderConfig, dtype=None) -> EncoderNetwork:
    """He-initialised weights (std sqrt(2/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(cfg.seed)
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.embedding_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        weights.append(Tensor(w, requires_grad=True, dtype=dtype))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True, dtype=dtype))
    return EncoderNetwork(weights=weights, biases=biases, config=cfg)


def encoder_forward(net: EncoderNetwork, batch: Tensor) -> Tensor:
    """Forward a [B, input_dim] batch to [B, d] embeddings."""
    if batch.shape[-1] != net.config.input_dim:
        raise DimensionError(
            f"batch width {batch.shape[-1]} != encoder input dim {net.config.input_dim}")
    h = batch
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = ad.add(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    return h
