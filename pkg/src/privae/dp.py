"""Gradient clipping, the three DP gradient aggregations, and the SGD step.

Gradients are flat float64 vectors in the parameter set's fixed order.
Noise is always added to the *sum* of clipped gradients, before scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import ParamSet, per_sample_gradients, value_and_grad

MODES = ("micro", "batch", "termwise")


@dataclass(frozen=True)
class ClipConfig:
    """Clip bounds: ``c1``/``c2`` for the term-wise branches, ``c`` for the baselines.

    ``c2 == 0`` disables the batch-wise branch.
    """

    c1: float = 0.05
    c2: float = 0.0
    c: float = 0.05

    def __post_init__(self):
        if not (self.c1 > 0 and self.c > 0):
            raise ValueError(f"ClipConfig: c1 and c must be positive, got c1={self.c1}, c={self.c}")
        if self.c2 < 0:
            raise ValueError(f"ClipConfig: c2 must be nonnegative, got {self.c2}")

    @property
    def batch_branch(self) -> bool:
        return self.c2 > 0


@dataclass(frozen=True)
class PartitionPlan:
    """Assignment of batch positions ``0..B-1`` to ``b`` disjoint equal groups."""

    b: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        B = a.shape[0]
        if self.b < 1 or B % self.b:
            raise ValueError(f"PartitionPlan: b={self.b} must divide batch size B={B}")
        counts = np.bincount(a, minlength=self.b)
        if a.min(initial=0) < 0 or counts.shape[0] != self.b or np.any(counts != B // self.b):
            raise ValueError("PartitionPlan: partitions must be disjoint, cover the batch and be equal-sized")

    @property
    def batch_size(self) -> int:
        return self.assignment.shape[0]

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == j) for j in range(self.b)]


def clip(g: np.ndarray, C: float) -> np.ndarray:
    """Scale ``g`` by ``min(1, C / ||g||)``; vectors inside the ball are returned unchanged."""
    if not C > 0:
        raise ValueError(f"clip: C must be positive, got {C}")
    norm = float(np.linalg.norm(g))
    if norm <= C:
        return g
    out = g * (C / norm)
    # rounding can leave the norm an ulp above C; shrink until it is not,
    # so a second clip is the identity
    while np.linalg.norm(out) > C:
        out = out * _SHRINK
    return out


_SHRINK = 1.0 - 2.0**-50


def clipped_sum(grads: Sequence[np.ndarray], C: float) -> np.ndarray:
    """Sum of clipped gradients, reduced in index order."""
    total = np.zeros_like(grads[0])
    for g in grads:
        total = total + clip(g, C)
    return total


def gaussian_noise(rng: np.random.Generator, size: int, std: float) -> np.ndarray:
    if std == 0.0:
        return np.zeros(size)
    return rng.normal(0.0, std, size=size)


def kappa(delta: float, batch_branch: bool = True) -> float:
    """Noise inflation ``2 sqrt(ln(delta/2) / ln(delta))``, or 1 without a batch-wise branch."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"kappa: delta must lie in (0, 1), got {delta}")
    if not batch_branch:
        return 1.0
    return 2.0 * math.sqrt((math.log(delta) - math.log(2.0)) / math.log(delta))


def partition_batch(B: int, b: int, rng: np.random.Generator) -> PartitionPlan:
    """Shuffle the ``B`` batch positions and chunk them into ``b`` equal groups."""
    if b < 1 or B < 1 or B % b:
        raise ValueError(f"partition_batch: b={b} must divide batch size B={B}")
    perm = rng.permutation(B)
    assignment = np.empty(B, dtype=np.int64)
    assignment[perm] = np.arange(B) // (B // b)
    return PartitionPlan(b, assignment)


def microagg_gradient(
    params: ParamSet,
    batch: Sequence,
    micro_loss_fn: Callable,
    C: float,
    sigma_eps: float,
    rng: np.random.Generator,
    shared_loss_fn: Callable | None = None,
) -> np.ndarray:
    """Micro-aggregation: ``(sum_i clip(g_i, C) + N(0, (sigma C)^2 I)) / B``.

    ``g_i`` is the gradient of ``micro_loss_fn(P, batch[i])``; if
    ``shared_loss_fn(P)`` is given its gradient is added to every ``g_i``,
    i.e. each micro-batch loss carries the shared batch-wise term.
    """
    if len(batch) == 0:
        raise ValueError("microagg_gradient: empty batch")
    grads = per_sample_gradients(micro_loss_fn, params, batch)
    if shared_loss_fn is not None:
        _, g_shared = value_and_grad(shared_loss_fn, params)
        grads = [g + g_shared for g in grads]
    total = clipped_sum(grads, C)
    return (total + gaussian_noise(rng, total.size, sigma_eps * C)) / len(batch)


def batchagg_gradient(
    params: ParamSet,
    batch: Sequence,
    batch_loss_fn: Callable,
    C: float,
    sigma_eps: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch-aggregation: one clipped whole-batch gradient plus noise, no ``1/B``."""
    if len(batch) == 0:
        raise ValueError("batchagg_gradient: empty batch")
    _, g = value_and_grad(batch_loss_fn, params, batch)
    g = clip(g, C)
    return g + gaussian_noise(rng, g.size, sigma_eps * C)


def termwise_sums(
    params: ParamSet,
    batch: Sequence,
    phi_fn: Callable,
    psi_fn: Callable | None,
    clip_cfg: ClipConfig,
    plan: PartitionPlan,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Pre-noise sums ``sum_i clip(grad phi_i, C1)`` and ``sum_j clip(grad psi(s_j), C2)``.

    ``psi_fn(P, j, members)`` evaluates the batch-wise term of partition
    ``j`` whose batch positions are ``members``. The second sum is ``None``
    when the batch-wise branch is disabled.
    """
    if plan.batch_size != len(batch):
        raise ValueError(f"termwise_gradient: plan covers {plan.batch_size} samples, batch has {len(batch)}")
    g_sample = clipped_sum(per_sample_gradients(phi_fn, params, batch), clip_cfg.c1)
    if not clip_cfg.batch_branch or psi_fn is None:
        return g_sample, None
    g_batch = np.zeros_like(g_sample)
    for j, members in enumerate(plan.groups()):
        _, g = value_and_grad(psi_fn, params, j, members)
        g_batch = g_batch + clip(g, clip_cfg.c2)
    return g_sample, g_batch


def termwise_gradient(
    params: ParamSet,
    batch: Sequence,
    phi_fn: Callable,
    psi_fn: Callable | None,
    clip_cfg: ClipConfig,
    plan: PartitionPlan,
    sigma_eps_prime: float,
    rng_sample: np.random.Generator,
    rng_batch: np.random.Generator | None = None,
) -> np.ndarray:
    """Term-wise DP gradient.

    ``(g_sample + n1) / B + (g_batch + n2) / b`` with independent noises
    ``n1 ~ N(0, (sigma' C1)^2 I)`` and ``n2 ~ N(0, (sigma' C2)^2 I)`` drawn
    from separate generators. With ``c2 == 0`` only the first term remains.
    """
    g_sample, g_batch = termwise_sums(params, batch, phi_fn, psi_fn, clip_cfg, plan)
    B = len(batch)
    out = (g_sample + gaussian_noise(rng_sample, g_sample.size, sigma_eps_prime * clip_cfg.c1)) / B
    if g_batch is not None:
        if rng_batch is None:
            raise ValueError("termwise_gradient: batch-wise branch needs its own noise generator")
        n2 = gaussian_noise(rng_batch, g_batch.size, sigma_eps_prime * clip_cfg.c2)
        out = out + (g_batch + n2) / plan.b
    return out


def sgd_step(params: ParamSet, g_tilde: np.ndarray, eta: float) -> ParamSet:
    """``theta - eta * g_tilde``, element-wise."""
    theta = params.flatten()
    g_tilde = np.asarray(g_tilde, dtype=np.float64)
    if g_tilde.shape != theta.shape:
        raise ValueError(f"sgd_step: gradient length {g_tilde.shape} does not match {theta.size} parameters")
    return params.unflatten(theta - eta * g_tilde)


def effective_noise_std(mode: str, sigma_eps: float, clip_cfg: ClipConfig, B: int, b: int, delta: float) -> float:
    """Per-step std of the noise in the released gradient (the Table-1 column)."""
    if mode in ("micro", "batch"):
        return clip_cfg.c * sigma_eps
    k = kappa(delta, clip_cfg.batch_branch)
    c2_term = clip_cfg.c2 / b if clip_cfg.batch_branch else 0.0
    return (clip_cfg.c1 / B + c2_term) * k * sigma_eps
