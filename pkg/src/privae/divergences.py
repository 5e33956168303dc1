"""Batch-wise divergence terms between the aggregate posterior and the prior."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, as_tensor
from .model import VAE, EncoderOutput, encode, reparameterize
from .priors import Prior

DEFAULT_SCALES = (0.2, 0.4, 1.0, 2.0, 4.0, 10.0)
KINDS = ("none", "mmd", "reverse_kl")


@dataclass(frozen=True)
class DivergenceSpec:
    """Which divergence to attach and its weight ``alpha``.

    ``literal`` switches the reverse-KL estimator to the unnormalised sum
    (no ``1/|s|`` factors).
    """

    kind: str = "none"
    alpha: float = 0.0
    scales: tuple = DEFAULT_SCALES
    literal: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"DivergenceSpec: kind must be one of {KINDS}, got {self.kind!r}")
        if self.alpha < 0:
            raise ValueError(f"DivergenceSpec: alpha must be nonnegative, got {self.alpha}")
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.scales or min(self.scales) <= 0:
            raise ValueError(f"DivergenceSpec: MMD scales must be strictly positive, got {self.scales}")

    @property
    def active(self) -> bool:
        return self.kind != "none"


def cauchy_kernel(x, y, scales: Sequence[float]) -> float:
    """Sum over dimensions and scales of ``s / (s + (x_d - y_d)^2)``."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"cauchy_kernel: dimension mismatch {x.shape} vs {y.shape}")
    sq = (x - y) ** 2
    return float(sum(np.sum(s / (s + sq)) for s in scales))


def _mean_kernel(X: Tensor, Y: Tensor, scales: Sequence[float]) -> Tensor:
    diff = X.reshape(X.shape[0], 1, X.shape[1]) - Y.reshape(1, Y.shape[0], Y.shape[1])
    sq = diff.square()
    total = None
    for s in scales:
        term = Tensor(s) / (sq + s)
        total = term if total is None else total + term
    return total.sum() * (1.0 / (X.shape[0] * Y.shape[0]))


def mmd(Zq, Zp, scales: Sequence[float] = DEFAULT_SCALES) -> Tensor:
    """Biased (V-statistic) squared MMD with the dimension-wise Cauchy kernel.

    Accepts arrays or tensors of shape ``(n, D)``. The cross term is
    evaluated in both argument orders so that ``mmd(a, b)`` and
    ``mmd(b, a)`` agree bit for bit.
    """
    Zq, Zp = as_tensor(Zq), as_tensor(Zp)
    if Zq.ndim != 2 or Zp.ndim != 2 or Zq.shape[0] == 0 or Zp.shape[0] == 0:
        raise ValueError(f"mmd: need two nonempty (n, D) sample sets, got {Zq.shape} and {Zp.shape}")
    if Zq.shape[1] != Zp.shape[1]:
        raise ValueError(f"mmd: dimension mismatch {Zq.shape[1]} vs {Zp.shape[1]}")
    self_terms = _mean_kernel(Zq, Zq, scales) + _mean_kernel(Zp, Zp, scales)
    cross = _mean_kernel(Zq, Zp, scales) + _mean_kernel(Zp, Zq, scales)
    return self_terms - cross


def reverse_kl_from_draws(prior: Prior, enc: EncoderOutput, z, literal: bool = False) -> Tensor:
    """Estimate ``KL(p || q)`` from prior draws ``z`` (shape ``(m, D)``).

    ``q`` is the mixture of the diagonal Gaussian posteriors in ``enc``
    (shapes ``(n, D)``).
    """
    z = np.asarray(z, dtype=np.float64)
    mu, log_var = enc.mu, enc.log_var
    n, m = mu.shape[0], z.shape[0]
    if n == 0 or m == 0:
        raise ValueError("reverse_kl_estimate: empty partition")
    diff = Tensor(z.reshape(m, 1, -1)) - mu.reshape(1, n, -1)
    lv = log_var.reshape(1, n, -1)
    log_q = ((diff.square() * (-lv).exp() + lv + math.log(2 * math.pi)) * -0.5).sum(axis=-1)
    log_mix = log_q.logsumexp(axis=-1)
    log_p = prior.log_density(z)
    if literal:
        return (log_p - log_mix).sum()
    return (log_p + math.log(n) - log_mix).mean()


def reverse_kl_estimate(prior: Prior, enc: EncoderOutput, rng: np.random.Generator, literal: bool = False) -> Tensor:
    """Draw ``|s|`` points from the prior and estimate ``KL(p || q)``."""
    n = enc.mu.shape[0]
    if n == 0:
        raise ValueError("reverse_kl_estimate: empty partition")
    return reverse_kl_from_draws(prior, enc, prior.sample(n, rng), literal=literal)


def psi(
    spec: DivergenceSpec,
    model: VAE,
    P: Mapping[str, Tensor],
    X,
    prior: Prior,
    eps,
    prior_draws,
) -> Tensor:
    """Weighted batch-wise term ``alpha * D(q(z), p(z))`` over one partition.

    ``X`` holds the partition's rows, ``eps`` one standard-normal draw per
    row (used by the MMD latents) and ``prior_draws`` one prior sample per
    row. Everything random is passed in, so the value depends only on the
    partition's own samples.
    """
    if not spec.active:
        raise ValueError("psi: divergence kind 'none' has no batch-wise term")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("psi: empty partition")
    if spec.alpha == 0.0:
        return Tensor(0.0)
    enc = encode(model, P, X)
    if spec.kind == "mmd":
        z = reparameterize(enc, eps=np.asarray(eps).reshape(enc.mu.shape)).z
        d = mmd(z, prior_draws, spec.scales)
    else:
        d = reverse_kl_from_draws(prior, enc, prior_draws, literal=spec.literal)
    return d * spec.alpha


def psi_sampled(spec, model, P, X, prior, rng: np.random.Generator) -> Tensor:
    """:func:`psi` with its latent noise and prior draws taken from ``rng``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    eps = rng.standard_normal((X.shape[0], model.latent_dim))
    draws = prior.sample(X.shape[0], rng)
    return psi(spec, model, P, X, prior, eps, draws)
