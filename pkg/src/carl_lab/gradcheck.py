"""Finite-difference verification of every loss composition.

Each composition rebuilds its graph in float64 from a flat parameter
vector, so the analytic gradients from ``backward`` can be compared
against the central-difference oracle coordinate by coordinate. The
oracle never touches the computation record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GRADCHECK_DTYPE, Tensor, finite_difference_gradient, relative_error
from .objective import (AssignmentDistribution, DecaySchedule, InfoNCEConfig,
                        PrototypeBank, assign_views, carl_total_loss,
                        compute_energy, consistency_loss, infonce_loss,
                        kl_to_uniform, batch_mean_assignment)

TOLERANCE = 1e-4
FD_STEP = 1e-5

BATCH_SIZES = (2, 4, 8)
PROTO_COUNTS = (2, 3, 16)
EMBED_DIMS = (3, 8)


@dataclass
class GradCheckResult:
    name: str
    relative_error: float
    dims: tuple

    @property
    def passed(self) -> bool:
        return self.relative_error < TOLERANCE


def _split(theta: np.ndarray, shapes) -> list[np.ndarray]:
    parts, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        parts.append(theta[offset:offset + size].reshape(shape).copy())
        offset += size
    return parts


def _check(loss_builder, initial_parts: list[np.ndarray], name: str, dims: tuple) -> GradCheckResult:
    """Compare backward gradients against the finite-difference oracle."""
    shapes = [p.shape for p in initial_parts]
    theta0 = np.concatenate([p.ravel() for p in initial_parts]).astype(GRADCHECK_DTYPE)

    def scalar_f(theta: np.ndarray) -> float:
        with ad.no_grad():
            tensors = [Tensor(p, dtype=GRADCHECK_DTYPE) for p in _split(theta, shapes)]
            return float(loss_builder(tensors).data)

    tensors = [Tensor(p, requires_grad=True, dtype=GRADCHECK_DTYPE)
               for p in _split(theta0, shapes)]
    loss = loss_builder(tensors)
    ad.backward(loss)
    analytic = np.concatenate([t.grad.ravel() for t in tensors])
    numeric = finite_difference_gradient(scalar_f, theta0, h=FD_STEP)
    return GradCheckResult(name=name, relative_error=relative_error(analytic, numeric),
                           dims=dims)


def _bank_from(c_tensor: Tensor) -> PrototypeBank:
    K, d = c_tensor.shape
    return PrototypeBank(C=c_tensor, K=K, d=d)


def run_suite(trials: int = 20, seed: int = 0) -> list[GradCheckResult]:
    """One pass = every composition at one random (B, K, d) instance.

    Runs ``trials`` passes with fresh draws and returns the flat result list.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    schedule = DecaySchedule(a=1.0, b=2.0, E=100)
    results: list[GradCheckResult] = []
    for trial in range(trials):
        B = int(rng.choice(BATCH_SIZES))
        K = int(rng.choice(PROTO_COUNTS))
        d = int(rng.choice(EMBED_DIMS))
        epoch = int(rng.integers(0, 120))
        za = rng.normal(size=(B, d))
        zb = rng.normal(size=(B, d))
        C = rng.normal(size=(K, d))
        qa = rng.normal(size=(B, K))
        qb = rng.normal(size=(B, K))
        dims = (B, K, d)

        def carl_norm(ts):
            pa = assign_views(compute_energy(ts[0], _bank_from(ts[2]), normalize=True))
            pb = assign_views(compute_energy(ts[1], _bank_from(ts[2]), normalize=True))
            return carl_total_loss(pa, pb, schedule, epoch)[0]

        def carl_raw(ts):
            pa = assign_views(compute_energy(ts[0], _bank_from(ts[2]), normalize=False))
            pb = assign_views(compute_energy(ts[1], _bank_from(ts[2]), normalize=False))
            return carl_total_loss(pa, pb, schedule, epoch)[0]

        def consistency_from_energies(ts):
            return consistency_loss(assign_views(ts[0]), assign_views(ts[1]))

        def kl_from_energies(ts):
            both = ad.concat_rows(assign_views(ts[0]).p, assign_views(ts[1]).p)
            return kl_to_uniform(batch_mean_assignment(AssignmentDistribution(p=both)))

        def infonce(ts):
            return infonce_loss(ts[0], ts[1], InfoNCEConfig(tau=0.2))

        results.append(_check(carl_norm, [za, zb, C], "carl_total_normalized", dims))
        results.append(_check(carl_raw, [za, zb, C], "carl_total_raw", dims))
        results.append(_check(consistency_from_energies, [qa, qb], "consistency", dims))
        results.append(_check(kl_from_energies, [qa, qb], "kl_to_uniform", dims))
        results.append(_check(infonce, [za, zb], "infonce", dims))
    return results


def worst_result(results: list[GradCheckResult]) -> GradCheckResult:
    return max(results, key=lambda r: r.relative_error)
