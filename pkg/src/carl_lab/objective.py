"""Prototype-assignment losses, entropy regularization, and schedules.

Embeddings are compared against a learnable bank of K prototype vectors.
Each view receives a softmax assignment distribution over the bank; the
training objective rewards agreement between the two views' distributions
while a KL-to-uniform term on the batch-mean assignment, weighted by a
linearly decayed coefficient, keeps the bank from collapsing. An in-batch
InfoNCE loss is provided as the instance-discrimination baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError

LOG_FLOOR = 1e-12


@dataclass
class PrototypeBank:
    """Learnable K x d matrix of prototype vectors."""

    C: Tensor
    K: int
    d: int

    @classmethod
    def create(cls, K: int, d: int, seed: int, dtype=None) -> "PrototypeBank":
        """Gaussian init with std 1/sqrt(d), rows scaled to unit norm."""
        if K < 2:
            raise ContractError(f"prototype bank needs K >= 2, got {K}")
        rng = np.random.default_rng(seed)
        raw = rng.normal(0.0, 1.0 / math.sqrt(d), size=(K, d))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        return cls(C=Tensor(raw, requires_grad=True, dtype=dtype), K=K, d=d)

    def renormalize_rows(self, eps: float = 1e-8) -> None:
        """Scale every prototype row back to unit norm (post-step upkeep)."""
        norms = np.linalg.norm(self.C.data, axis=1, keepdims=True)
        self.C.data /= np.maximum(norms, eps)


@dataclass
class AssignmentDistribution:
    """Per-view probability rows over the K prototypes."""

    p: Tensor

    @property
    def batch_size(self) -> int:
        return self.p.shape[0]

    @property
    def num_prototypes(self) -> int:
        return self.p.shape[1]


@dataclass
class DecaySchedule:
    """Linear decay of the regularizer weight from b down to a over E epochs."""

    a: float
    b: float
    E: int

    def __post_init__(self):
        if not (self.b >= self.a >= 0.0):
            raise ContractError(f"decay schedule needs b >= a >= 0, got a={self.a}, b={self.b}")
        if self.E < 1:
            raise ContractError(f"decay epochs must be positive, got {self.E}")


@dataclass
class InfoNCEConfig:
    tau: float = 0.2

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractError(f"temperature must be positive, got {self.tau}")


def compute_energy(z: Tensor, bank: PrototypeBank, normalize: bool = False) -> Tensor:
    """Dot-product energies between embeddings and every prototype: [B,d] -> [B,K].

    The default is the literal dot product, whose unbounded magnitude lets
    assignments sharpen to (near) one-hots; that sharpening is what makes
    collapse observable and the consistency loss drivable to zero. With
    ``normalize`` both the embeddings and the prototype rows are scaled to
    unit norm first, bounding every energy in [-1, 1] (and capping per-row
    confidence, so usage perplexity cannot drop far below K).
    """
    if z.shape[-1] != bank.d:
        raise DimensionError(f"embedding dim {z.shape[-1]} != prototype dim {bank.d}")
    if normalize:
        z = ad.l2_normalize_rows(z)
        c = ad.l2_normalize_rows(bank.C)
    else:
        c = bank.C
    return ad.matmul(z, ad.transpose(c))


def assign_views(q: Tensor) -> AssignmentDistribution:
    """Softmax the energy rows into assignment probabilities (no temperature)."""
    return AssignmentDistribution(p=ad.softmax_rows(q))


def consistency_loss(pa: AssignmentDistribution, pp: AssignmentDistribution) -> Tensor:
    """Mean negative log dot-product between paired assignment rows.

    Zero exactly when every pair agrees on a one-hot assignment; the log is
    floored at 1e-12 so fully disjoint assignments stay finite.
    """
    if pa.p.shape != pp.p.shape:
        raise DimensionError(f"assignment shapes differ: {pa.p.shape} vs {pp.p.shape}")
    B = pa.batch_size
    agreement = ad.tensor_sum(ad.mul(pa.p, pp.p), axis=1)
    return ad.mul(ad.tensor_sum(ad.log_clamped(agreement, LOG_FLOOR)), -1.0 / B)


def batch_mean_assignment(p_all: AssignmentDistribution) -> Tensor:
    """Column mean over every supplied assignment row: [B,K] -> [K]."""
    if p_all.batch_size < 1:
        raise ContractError("batch_mean_assignment: empty batch")
    return ad.mean_rows(p_all.p)


def kl_to_uniform(p_hat: Tensor) -> Tensor:
    """KL divergence from a mean assignment vector to the uniform distribution.

    log(K) + sum(p*log p) with 0*log 0 handled by the clamped log; ranges
    over [0, log K].
    """
    total = float(p_hat.data.sum())
    if abs(total - 1.0) > 1e-5:
        raise ContractError(f"kl_to_uniform: input sums to {total}, expected 1")
    if np.any(p_hat.data < 0):
        raise ContractError("kl_to_uniform: negative probability mass")
    K = p_hat.data.size
    entropy_term = ad.tensor_sum(ad.mul(p_hat, ad.log_clamped(p_hat, LOG_FLOOR)))
    return ad.add(entropy_term, math.log(K))


def decay_weight(schedule: DecaySchedule, epoch: int) -> float:
    """lambda_e: b - ((b-a)/E)*e while e <= E, then the plateau value a."""
    if epoch < 0:
        raise ContractError(f"epoch must be nonnegative, got {epoch}")
    if epoch > schedule.E:
        return schedule.a
    return schedule.b - ((schedule.b - schedule.a) / schedule.E) * epoch


def carl_total_loss(pa: AssignmentDistribution, pp: AssignmentDistribution,
                    schedule: DecaySchedule, epoch: int) -> tuple[Tensor, dict]:
    """Consistency plus weighted KL term; both views feed the mean assignment.

    Returns the scalar loss tensor and a parts dict for logging. The parts
    are recomputed in float64 from the assignment values so logged numbers
    do not inherit float32 reduction noise from the training graph.
    """
    lam = decay_weight(schedule, epoch)
    cons = consistency_loss(pa, pp)
    p_hat = batch_mean_assignment(
        AssignmentDistribution(p=ad.concat_rows(pa.p, pp.p)))
    kl = kl_to_uniform(p_hat)
    total = ad.add(cons, ad.mul(kl, lam))

    pa64 = pa.p.data.astype(np.float64)
    pp64 = pp.p.data.astype(np.float64)
    agree = np.maximum((pa64 * pp64).sum(axis=1), LOG_FLOOR)
    cons64 = float(-np.log(agree).mean())
    p_hat64 = np.concatenate([pa64, pp64], axis=0).mean(axis=0)
    kl64 = float(math.log(p_hat64.size)
                 + (p_hat64 * np.log(np.maximum(p_hat64, LOG_FLOOR))).sum())
    parts = {"consistency": cons64, "kl": kl64, "lambda": lam}
    return total, parts


def infonce_loss(anchors: Tensor, positives: Tensor, cfg: InfoNCEConfig) -> Tensor:
    """In-batch instance discrimination with cosine similarities.

    For anchor i the positive is row i of ``positives`` and the negatives are
    the other 2B-2 in-batch representations, so each anchor faces a softmax
    over 2B-1 candidates.
    """
    if anchors.shape != positives.shape:
        raise DimensionError(f"anchor/positive shapes differ: {anchors.shape} vs {positives.shape}")
    B = anchors.shape[0]
    if B < 2:
        raise ContractError(f"infonce_loss needs a batch of at least 2, got {B}")
    za = ad.l2_normalize_rows(anchors)
    zb = ad.l2_normalize_rows(positives)
    z_all = ad.concat_rows(za, zb)                      # [2B, d]
    sims = ad.mul(ad.matmul(za, ad.transpose(z_all)), 1.0 / cfg.tau)  # [B, 2B]

    # Anchor i must not count itself among the candidates.
    self_mask = np.zeros((B, 2 * B), dtype=sims.dtype)
    self_mask[np.arange(B), np.arange(B)] = -1e9
    pos_mask = np.zeros((B, 2 * B), dtype=sims.dtype)
    pos_mask[np.arange(B), B + np.arange(B)] = 1.0

    masked = ad.add(sims, Tensor(self_mask, dtype=sims.dtype))
    log_denominator = ad.tensor_sum(ad.logsumexp_rows(masked))
    positive_logit = ad.tensor_sum(ad.mul(sims, Tensor(pos_mask, dtype=sims.dtype)))
    return ad.mul(ad.add(log_denominator, ad.mul(positive_logit, -1.0)), 1.0 / B)
