"""Siamese training loop, collapse diagnostics, and checkpointing.

Both views of a batch pass through the same encoder parameters; gradients
from the two passes accumulate into one parameter set before the SGD step.
Per-epoch metrics capture the loss decomposition plus prototype-usage
statistics, which is where assignment collapse shows up first.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tensor
from .data import AugmentationConfig, LabeledDataset, iter_epoch_batches
from .encoder import EncoderConfig, EncoderNetwork, encoder_forward, encoder_init
from .errors import CheckpointVersionError, ContractError, DivergedError, FormatError
from .objective import (DecaySchedule, InfoNCEConfig, PrototypeBank,
                        assign_views, carl_total_loss, compute_energy,
                        decay_weight, infonce_loss)

CHECKPOINT_MAGIC = b"CARL"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    num_prototypes: int
    schedule: DecaySchedule
    encoder: EncoderConfig
    augmentation: AugmentationConfig
    lr_start: float = 0.6
    lr_end: float = 0.0006
    momentum: float = 0.9
    weight_decay: float = 5e-4
    loss_kind: str = "carl"            # "carl" | "infonce"
    tau: float = 0.2
    normalize_energies: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.num_prototypes < 2:
            raise ContractError(f"num_prototypes must be >= 2, got {self.num_prototypes}")
        if self.loss_kind not in ("carl", "infonce"):
            raise ContractError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class TrainState:
    encoder: EncoderNetwork
    bank: PrototypeBank
    optimizer_states: list[OptimizerState]
    epoch: int = 0
    seed: int = 0

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + [self.bank.C]


@dataclass
class MetricsRecord:
    """Per-epoch measurements; one CSV/JSONL row each."""

    epoch: int
    total_loss: float
    consistency_loss: float
    kl_value: float
    lambda_weight: float
    learning_rate: float
    perplexity: float
    max_cluster_share: float
    num_prototypes: int
    wall_seconds: float = 0.0

    CSV_FIELDS = ("epoch", "total_loss", "consistency_loss", "kl_value",
                  "lambda_weight", "learning_rate", "perplexity",
                  "max_cluster_share", "num_prototypes")

    def csv_row(self) -> str:
        # wall_seconds is excluded so identical runs stay byte-identical;
        # it is still written to the JSONL stream.
        cells = [str(self.epoch)]
        for name in self.CSV_FIELDS[1:-1]:
            cells.append(repr(getattr(self, name)))
        cells.append(str(self.num_prototypes))
        return ",".join(cells)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in
                (*self.CSV_FIELDS, "wall_seconds")}


def init_train_state(config: TrainConfig) -> TrainState:
    """Fresh encoder, prototype bank, and zeroed optimizer slots."""
    enc_cfg = EncoderConfig(input_dim=config.encoder.input_dim,
                            hidden_dims=list(config.encoder.hidden_dims),
                            embedding_dim=config.encoder.embedding_dim,
                            seed=config.seed)
    encoder = encoder_init(enc_cfg)
    bank = PrototypeBank.create(config.num_prototypes,
                                config.encoder.embedding_dim,
                                seed=config.seed + 1)
    state = TrainState(encoder=encoder, bank=bank, optimizer_states=[],
                       epoch=0, seed=config.seed)
    state.optimizer_states = [
        OptimizerState(momentum=config.momentum, weight_decay=config.weight_decay)
        for _ in state.parameters()
    ]
    return state


def prototype_usage_perplexity(p_hat: np.ndarray) -> float:
    """exp(entropy) of a mean assignment: 1 at total collapse, K when uniform."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if abs(p_hat.sum() - 1.0) > 1e-5 or np.any(p_hat < 0):
        raise ContractError("perplexity input must be a probability vector")
    nz = p_hat[p_hat > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


def detect_collapse(record: MetricsRecord, threshold_fraction: float = 0.05) -> bool:
    """True when prototype usage shrank below a fraction of the bank size."""
    if not 0.0 < threshold_fraction <= 1.0:
        raise ContractError(f"threshold_fraction must be in (0, 1], got {threshold_fraction}")
    return record.perplexity < threshold_fraction * record.num_prototypes


def train_epoch(state: TrainState, config: TrainConfig,
                dataset: LabeledDataset) -> MetricsRecord:
    """One shuffled pass; returns the aggregated epoch metrics.

    A non-finite loss aborts immediately with the offending batch index
    rather than continuing on garbage.
    """
    start = time.perf_counter()
    epoch = state.epoch
    lam = decay_weight(config.schedule, epoch)
    lr = cosine_learning_rate_for(config, epoch)
    params = state.parameters()
    totals, cons_vals, kl_vals = [], [], []
    p_hat_sum = np.zeros(config.num_prototypes, dtype=np.float64)
    num_batches = 0

    for batch_index, batch in iter_epoch_batches(dataset, config.batch_size,
                                                 epoch, config.seed,
                                                 config.augmentation):
        try:
            za = encoder_forward(state.encoder, batch.view_a)
            zb = encoder_forward(state.encoder, batch.view_b)
            if config.loss_kind == "carl":
                pa = assign_views(compute_energy(za, state.bank, config.normalize_energies))
                pb = assign_views(compute_energy(zb, state.bank, config.normalize_energies))
                total, parts = carl_total_loss(pa, pb, config.schedule, epoch)
                p_batch = np.concatenate([pa.p.data, pb.p.data]).astype(np.float64).mean(axis=0)
            else:
                total = infonce_loss(za, zb, InfoNCEConfig(tau=config.tau))
                parts = {"consistency": float(total.data), "kl": 0.0, "lambda": lam}
                with ad.no_grad():
                    pa = assign_views(compute_energy(za.detach(), state.bank,
                                                     config.normalize_energies))
                    pb = assign_views(compute_energy(zb.detach(), state.bank,
                                                     config.normalize_energies))
                p_batch = np.concatenate([pa.p.data, pb.p.data]).astype(np.float64).mean(axis=0)
            finite = bool(np.isfinite(total.data))
        except ContractError:
            # non-finite activations trip the numeric preconditions downstream
            finite = False
        if not finite:
            raise DivergedError(
                f"non-finite loss at epoch {epoch}, batch {batch_index}",
                epoch=epoch, batch_index=batch_index)

        ad.backward(total)
        for param, opt in zip(params, state.optimizer_states):
            if param.grad is not None:
                ad.sgd_momentum_step(param, param.grad, opt, lr)
            param.zero_grad()
        if config.loss_kind == "carl" and config.normalize_energies:
            state.bank.renormalize_rows()

        totals.append(parts["consistency"] + parts["lambda"] * parts["kl"])
        cons_vals.append(parts["consistency"])
        kl_vals.append(parts["kl"])
        p_hat_sum += p_batch
        num_batches += 1

    if num_batches == 0:
        raise ContractError(
            f"dataset of {len(dataset)} samples yields no full batch of {config.batch_size}")

    p_hat_epoch = p_hat_sum / num_batches
    record = MetricsRecord(
        epoch=epoch,
        total_loss=float(np.mean(totals)),
        consistency_loss=float(np.mean(cons_vals)),
        kl_value=float(np.mean(kl_vals)),
        lambda_weight=lam,
        learning_rate=lr,
        perplexity=prototype_usage_perplexity(p_hat_epoch),
        max_cluster_share=float(p_hat_epoch.max()),
        num_prototypes=config.num_prototypes,
        wall_seconds=time.perf_counter() - start,
    )
    state.epoch += 1
    return record


def cosine_learning_rate_for(config: TrainConfig, epoch: int) -> float:
    return ad.cosine_learning_rate(epoch, config.epochs, config.lr_start, config.lr_end)


def train_run(config: TrainConfig, dataset: LabeledDataset,
              state: TrainState | None = None,
              epoch_callback=None) -> tuple[TrainState, list[MetricsRecord]]:
    """Run (or resume) training until ``config.epochs``; collects all records."""
    if state is None:
        state = init_train_state(config)
    records = []
    while state.epoch < config.epochs:
        record = train_epoch(state, config, dataset)
        records.append(record)
        if epoch_callback is not None:
            epoch_callback(record)
    return state, records


# ---------------------------------------------------------------------------
# checkpoint format: little-endian header + raw float32 parameter arrays
# ---------------------------------------------------------------------------

def checkpoint_save(state: TrainState, path) -> None:
    """Serialize parameters, momentum buffers, epoch and seed."""
    enc = state.encoder.config
    header = bytearray()
    header += CHECKPOINT_MAGIC
    header += struct.pack("<I", CHECKPOINT_VERSION)
    header += struct.pack("<IIII", state.bank.K, state.bank.d,
                          enc.input_dim, len(enc.hidden_dims))
    header += struct.pack(f"<{len(enc.hidden_dims)}I", *enc.hidden_dims)
    opt = state.optimizer_states[0]
    header += struct.pack("<IqQdd?", state.epoch, state.seed, opt.step_count,
                          opt.momentum, opt.weight_decay, True)
    blobs = [bytes(header)]
    params = state.parameters()
    for p in params:
        blobs.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    for p, o in zip(params, state.optimizer_states):
        buf = o.buffer if o.buffer is not None else np.zeros_like(p.data)
        blobs.append(np.ascontiguousarray(buf, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blobs))


def checkpoint_load(path) -> TrainState:
    """Rebuild a TrainState; raises FormatError on truncated/oversized files."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    offset = 0

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(view):
            raise FormatError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, view, offset)
        offset += size
        return values

    magic = bytes(view[:4])
    offset = 4
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    K, d, input_dim, n_hidden = take("<IIII")
    hidden_dims = list(take(f"<{n_hidden}I"))
    epoch, seed, step_count, momentum, weight_decay, _ = take("<IqQdd?")

    enc_cfg = EncoderConfig(input_dim=input_dim, hidden_dims=hidden_dims,
                            embedding_dim=d, seed=int(seed))
    encoder = encoder_init(enc_cfg)
    bank = PrototypeBank.create(K, d, seed=int(seed) + 1)
    state = TrainState(encoder=encoder, bank=bank, optimizer_states=[],
                       epoch=epoch, seed=int(seed))

    def read_array(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        size = count * 4
        if offset + size > len(view):
            raise FormatError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(view, dtype="<f4", count=count, offset=offset)
        offset += size
        return arr.reshape(shape).astype(np.float32)  # writable copy

    params = state.parameters()
    for p in params:
        p.data = read_array(p.shape)
    for p in params:
        buf = read_array(p.shape)
        state.optimizer_states.append(OptimizerState(
            momentum=momentum, weight_decay=weight_decay,
            buffer=buf, step_count=int(step_count)))
    if offset != len(view):
        raise FormatError(f"{path}: {len(view) - offset} unexpected trailing bytes")
    return state
