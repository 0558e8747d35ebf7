"""Frozen-feature linear evaluation and cluster-quality diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tensor, parameters_checksum
from .data import LabeledDataset
from .encoder import EncoderNetwork, encoder_forward
from .errors import ContractError, DimensionError


@dataclass
class ProbeResult:
    top1_accuracy: float
    per_class_accuracy: list[float]
    probe_epochs: int
    dataset: str = ""
    encoder_checkpoint: str = ""


def extract_features(encoder: EncoderNetwork, dataset: LabeledDataset,
                     batch_size: int = 512) -> np.ndarray:
    """Deterministic embeddings of the raw samples, no augmentation.

    The encoder is asserted frozen: a parameter checksum must match before
    and after extraction.
    """
    if dataset.sample_dim != encoder.config.input_dim:
        raise DimensionError(
            f"dataset dim {dataset.sample_dim} != encoder input dim {encoder.config.input_dim}")
    before = parameters_checksum(encoder.parameters())
    chunks = []
    with ad.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = Tensor(dataset.samples[start:start + batch_size])
            chunks.append(encoder_forward(encoder, batch).data.copy())
    after = parameters_checksum(encoder.parameters())
    if before != after:
        raise ContractError("encoder parameters changed during feature extraction")
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, encoder.config.embedding_dim))


def top1_accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of exact matches between two equal-length label arrays."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise DimensionError(
            f"prediction/label shapes differ or empty: {predictions.shape} vs {labels.shape}")
    return float((predictions == labels).mean())


def _softmax_cross_entropy(logits: Tensor, one_hot: np.ndarray) -> Tensor:
    """Mean cross-entropy over rows via logsumexp minus the true-class logit."""
    n = logits.shape[0]
    lse = ad.tensor_sum(ad.logsumexp_rows(logits))
    picked = ad.tensor_sum(ad.mul(logits, Tensor(one_hot, dtype=logits.dtype)))
    return ad.mul(ad.add(lse, ad.mul(picked, -1.0)), 1.0 / n)


def train_linear_probe(features: np.ndarray, labels: np.ndarray,
                       epochs: int = 50, lr: float = 0.03, seed: int = 0,
                       batch_size: int = 256, test_fraction: float = 0.2,
                       eval_features: np.ndarray | None = None,
                       eval_labels: np.ndarray | None = None,
                       dataset_name: str = "",
                       encoder_checkpoint: str = "") -> ProbeResult:
    """Single affine layer + softmax cross-entropy on frozen features.

    Without an explicit eval split the data is shuffled by ``seed`` and cut
    80/20; CIFAR-style callers pass the official test split instead. Returns
    held-out top-1 plus per-class accuracies.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1
    rng = np.random.default_rng(seed)

    if eval_features is None:
        order = rng.permutation(len(features))
        cut = max(1, int(round(len(features) * (1.0 - test_fraction))))
        train_idx, test_idx = order[:cut], order[cut:]
        train_x, train_y = features[train_idx], labels[train_idx]
        test_x, test_y = features[test_idx], labels[test_idx]
    else:
        train_x, train_y = features, labels
        test_x = np.asarray(eval_features, dtype=np.float32)
        test_y = np.asarray(eval_labels, dtype=np.int64)
    if len(np.unique(train_y)) < 2:
        raise ContractError("probe training split is single-class")

    d = train_x.shape[1]
    w = Tensor(rng.normal(0.0, 0.01, size=(d, num_classes)), requires_grad=True)
    b = Tensor(np.zeros(num_classes), requires_grad=True)
    states = [OptimizerState(momentum=0.9, weight_decay=0.0) for _ in range(2)]

    for epoch in range(epochs):
        order = rng.permutation(len(train_x))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            x = Tensor(train_x[idx])
            one_hot = np.zeros((len(idx), num_classes), dtype=np.float32)
            one_hot[np.arange(len(idx)), train_y[idx]] = 1.0
            logits = ad.add(ad.matmul(x, w), b)
            loss = _softmax_cross_entropy(logits, one_hot)
            ad.backward(loss)
            for param, state in zip((w, b), states):
                ad.sgd_momentum_step(param, param.grad, state, lr)
                param.zero_grad()

    scores = test_x @ w.data + b.data
    preds = scores.argmax(axis=1)
    per_class = []
    for c in range(num_classes):
        mask = test_y == c
        per_class.append(float((preds[mask] == c).mean()) if mask.any() else 0.0)
    return ProbeResult(top1_accuracy=top1_accuracy(preds, test_y),
                       per_class_accuracy=per_class,
                       probe_epochs=epochs,
                       dataset=dataset_name,
                       encoder_checkpoint=encoder_checkpoint)


def cluster_diagnostics(assignments: np.ndarray, labels: np.ndarray) -> dict:
    """Usage histogram, usage perplexity, and majority-label purity.

    Ties in the per-row argmax go to the lowest prototype index. Purity is
    the mean, over prototypes with members, of the majority-label fraction.
    """
    p = np.asarray(assignments, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-5):
        raise ContractError("assignment rows must sum to 1")
    K = p.shape[1]
    hard = p.argmax(axis=1)
    usage = np.bincount(hard, minlength=K)
    p_hat = p.mean(axis=0)
    nz = p_hat[p_hat > 0]
    perplexity = float(np.exp(-(nz * np.log(nz)).sum()))
    purities = []
    for k in range(K):
        members = labels[hard == k]
        if len(members):
            purities.append(np.bincount(members).max() / len(members))
    return {"usage": usage, "perplexity": perplexity,
            "purity": float(np.mean(purities)) if purities else 0.0}
