"""Desk-scale lab for prototype-assignment representation learning.

A small reverse-mode tensor engine, the view-consistency objective with
its entropy regularizer, an MLP encoder, data pipelines for synthetic
mixtures and CIFAR-10 binaries, a Siamese trainer with collapse
diagnostics, and frozen-feature linear evaluation.
"""

from .autodiff import (ComputationRecord, OptimizerState, Tensor, backward,
                       cosine_learning_rate, finite_difference_gradient,
                       l2_normalize_rows, log_clamped, matmul, no_grad,
                       relative_error, sgd_momentum_step, softmax_rows)
from .data import (AugmentationConfig, LabeledDataset, ViewBatch,
                   augment_image, augment_vector, generate_gaussian_mixture,
                   load_cifar10_binary, make_view_batch, write_cifar10_binary)
from .encoder import EncoderConfig, EncoderNetwork, encoder_forward, encoder_init
from .errors import (CarlLabError, CheckpointVersionError, ConfigError,
                     ContractError, DimensionError, DivergedError,
                     FormatError, RecordStateError)
from .evaluation import (ProbeResult, cluster_diagnostics, extract_features,
                         top1_accuracy, train_linear_probe)
from .objective import (AssignmentDistribution, DecaySchedule, InfoNCEConfig,
                        PrototypeBank, assign_views, batch_mean_assignment,
                        carl_total_loss, compute_energy, consistency_loss,
                        decay_weight, infonce_loss, kl_to_uniform)
from .trainer import (MetricsRecord, TrainConfig, TrainState, checkpoint_load,
                      checkpoint_save, detect_collapse, init_train_state,
                      prototype_usage_perplexity, train_epoch, train_run)

__version__ = "0.1.0"
