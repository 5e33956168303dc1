"""Gaussian-posterior MLP VAE and its sample-wise loss term.

Parameters live in a :class:`~privae.autodiff.ParamSet`; every function
here takes a mapping of name to :class:`Tensor` (``ParamSet.leaves()`` when
differentiating, ``ParamSet.constants()`` otherwise), so the model object
itself holds only the architecture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .autodiff import ParamSet, Tensor, affine, as_tensor, gaussian_log_density
from .priors import Prior

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 10.0
LIKELIHOODS = ("gaussian", "bernoulli")


class EncoderOutput(NamedTuple):
    mu: Tensor
    log_var: Tensor


class LatentSample(NamedTuple):
    z: Tensor
    eps: np.ndarray


@dataclass
class LossTerms:
    rec: float
    kld: float
    psi: float = 0.0
    beta: float = 1.0
    alpha: float = 0.0


@dataclass(frozen=True)
class VAE:
    """Architecture description: two tanh hidden layers on each side."""

    input_dim: int
    latent_dim: int
    hidden: tuple = (64, 64)
    likelihood: str = "gaussian"

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"VAE: likelihood must be one of {LIKELIHOODS}, got {self.likelihood!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValueError(f"VAE: expected two positive hidden widths, got {self.hidden}")

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        h1, h2 = self.hidden
        return [
            ("enc.l1", self.input_dim, h1),
            ("enc.l2", h1, h2),
            ("enc.mu", h2, self.latent_dim),
            ("enc.logvar", h2, self.latent_dim),
            ("dec.l1", self.latent_dim, h2),
            ("dec.l2", h2, h1),
            ("dec.out", h1, self.input_dim),
        ]

    def init_params(self, rng: np.random.Generator, zero_heads: bool = False) -> ParamSet:
        """Uniform(+-sqrt(6/fan_in)) weights, zero biases.

        ``zero_heads`` zeroes the encoder output layers so that
        ``mu = log_var = 0`` for every input.
        """
        arrays = []
        for name, fan_in, fan_out in self.layer_shapes():
            bound = math.sqrt(6.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            if zero_heads and name in ("enc.mu", "enc.logvar"):
                W = np.zeros_like(W)
            arrays.append((name + ".W", W))
            arrays.append((name + ".b", np.zeros(fan_out)))
        return ParamSet(arrays)

    def check_params(self, params: ParamSet) -> None:
        for name, fan_in, fan_out in self.layer_shapes():
            for suffix, shape in ((".W", (fan_in, fan_out)), (".b", (fan_out,))):
                key = name + suffix
                if key not in params:
                    raise ValueError(f"parameters are missing {key!r}")
                if params[key].shape != shape:
                    raise ValueError(f"parameter {key!r} has shape {params[key].shape}, expected {shape}")


def _layer(P: Mapping[str, Tensor], name: str, x: Tensor) -> Tensor:
    return affine(x, P[name + ".W"], P[name + ".b"])


def encode(model: VAE, P: Mapping[str, Tensor], x) -> EncoderOutput:
    """Encoder means and clamped log-variances for one row or a matrix of rows."""
    x = as_tensor(x)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"encode: input dimension {x.shape[-1]} does not match model input {model.input_dim}")
    h = _layer(P, "enc.l1", x).tanh()
    h = _layer(P, "enc.l2", h).tanh()
    mu = _layer(P, "enc.mu", h)
    log_var = _layer(P, "enc.logvar", h).clamp(LOG_VAR_MIN, LOG_VAR_MAX)
    return EncoderOutput(mu, log_var)


def decode(model: VAE, P: Mapping[str, Tensor], z) -> Tensor:
    """Decoder output: the mean under a Gaussian likelihood, logits under Bernoulli."""
    h = _layer(P, "dec.l1", as_tensor(z)).tanh()
    h = _layer(P, "dec.l2", h).tanh()
    return _layer(P, "dec.out", h)


def reparameterize(enc: EncoderOutput, rng: np.random.Generator | None = None, eps=None) -> LatentSample:
    """``z = mu + exp(log_var / 2) * eps``; ``eps`` is drawn from ``rng`` if not given.

    ``eps`` may carry leading draw axes, e.g. shape ``(L, D)`` for ``L`` draws
    from a single posterior.
    """
    if eps is None:
        eps = rng.standard_normal(enc.mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    z = enc.mu + (enc.log_var * 0.5).exp() * eps
    return LatentSample(z, eps)


def _neg_log_lik(model: VAE, x: np.ndarray, out: Tensor) -> Tensor:
    # rows of out are independent draws; returns one value per row
    if model.likelihood == "gaussian":
        return ((out - x).square()).sum(axis=-1) * 0.5
    return (out.softplus() - out * x).sum(axis=-1)


def reconstruction_loss(model: VAE, P: Mapping[str, Tensor], x, enc: EncoderOutput, eps) -> Tensor:
    """``-(1/L) sum_l log p(x | z_l)`` over the ``L`` rows of ``eps``.

    The Gaussian likelihood has unit variance with its normalising constant
    dropped, i.e. ``0.5 * ||x - x_hat||^2``.
    """
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    if eps.shape[0] == 0:
        raise ValueError("reconstruction_loss: need at least one latent draw (L >= 1)")
    x = np.asarray(x, dtype=np.float64)
    z = reparameterize(enc, eps=eps).z
    return _neg_log_lik(model, x, decode(model, P, z)).mean()


def posterior_log_prob(enc: EncoderOutput, z) -> Tensor:
    return gaussian_log_density(z, enc.mu, enc.log_var)


def kld_term(enc: EncoderOutput, z, prior: Prior) -> Tensor:
    """Single-draw Monte-Carlo estimate ``log q(z|x) - log p(z)``."""
    return posterior_log_prob(enc, z) - prior.log_prob(z)


def analytic_kl_standard_normal(mu: np.ndarray, log_var: np.ndarray) -> float:
    """Closed-form ``KL(N(mu, diag exp(log_var)) || N(0, I))`` (test oracle)."""
    mu, log_var = np.asarray(mu), np.asarray(log_var)
    return float(0.5 * np.sum(np.exp(log_var) + mu**2 - 1.0 - log_var))


def phi(model: VAE, P: Mapping[str, Tensor], x, prior: Prior, beta: float, eps) -> tuple[Tensor, LossTerms]:
    """Sample-wise loss ``rec(x) + beta * kld(x)`` and its components.

    ``eps`` has shape ``(L, D)``; the first draw also feeds the KL estimate.
    """
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    enc = encode(model, P, x)
    rec = reconstruction_loss(model, P, x, enc, eps)
    z1 = reparameterize(enc, eps=eps[0]).z
    kld = kld_term(enc, z1, prior)
    terms = LossTerms(rec=rec.item(), kld=kld.item(), beta=beta)
    # beta == 0 keeps the KL node off the differentiated path entirely
    loss = rec if beta == 0.0 else rec + kld * beta
    return loss, terms


def generate(model: VAE, params: ParamSet, prior: Prior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Decode ``n`` prior draws; Bernoulli models return pixel probabilities."""
    if n == 0:
        return np.zeros((0, model.input_dim))
    z = prior.sample(n, rng)
    out = decode(model, params.constants(), z).data
    if model.likelihood == "bernoulli":
        out = 1.0 / (1.0 + np.exp(-out))
    return out
