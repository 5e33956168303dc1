"""Evaluation metrics: Hoyer sparsity, MMD to the prior, log-likelihood proxy."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ParamSet
from .divergences import DEFAULT_SCALES, mmd, reverse_kl_from_draws
from .model import VAE, EncoderOutput, encode, reconstruction_loss
from .priors import Prior


def hoyer(y) -> float:
    """``(sqrt(d) - |y|_1 / |y|_2) / (sqrt(d) - 1)``: 0 when dense, 1 when one-hot."""
    y = np.asarray(y, dtype=np.float64).ravel()
    d = y.size
    if d < 2:
        raise ValueError(f"hoyer: need dimension d >= 2, got {d}")
    l2 = np.linalg.norm(y)
    if l2 == 0:
        raise ValueError("hoyer: undefined for the zero vector")
    a = np.abs(y)
    # endpoints are exact so rounding cannot push them off 0 and 1
    if np.all(a == a[0]):
        return 0.0
    if np.count_nonzero(a) == 1:
        return 1.0
    sd = math.sqrt(d)
    return float((sd - a.sum() / l2) / (sd - 1.0))


def standardize(latents: np.ndarray) -> np.ndarray:
    """Divide each dimension by its standard deviation over the dataset.

    Dimensions with zero spread are set to 0.
    """
    z = np.asarray(latents, dtype=np.float64)
    sd = z.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, z / safe, 0.0)


def sparsity(latents) -> float:
    """Mean Hoyer score of the standardized rows of an ``(n, D)`` latent matrix."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 2:
        raise ValueError(f"sparsity: need an (n, D) matrix with n >= 2 and D >= 2, got shape {z.shape}")
    zbar = standardize(z)
    l1 = np.abs(zbar).sum(axis=1)
    l2 = np.linalg.norm(zbar, axis=1)
    if np.any(l2 == 0):
        raise ValueError("sparsity: a standardized row is identically zero")
    sd = math.sqrt(z.shape[1])
    return float(np.mean((sd - l1 / l2) / (sd - 1.0)))


def encoder_means(model: VAE, params: ParamSet, X: np.ndarray) -> np.ndarray:
    return encode(model, params.constants(), np.atleast_2d(X)).mu.data


def default_n_eval(n: int) -> int:
    return min(n, 2048)


def _subset(X: np.ndarray, n_eval: int, rng: np.random.Generator) -> np.ndarray:
    if n_eval >= X.shape[0]:
        return X
    return X[np.sort(rng.choice(X.shape[0], size=n_eval, replace=False))]


def mmd_metric(
    model: VAE,
    params: ParamSet,
    X: np.ndarray,
    prior: Prior,
    rng: np.random.Generator,
    n_eval: int | None = None,
    scales=DEFAULT_SCALES,
) -> float:
    """MMD^2 between one posterior draw per encoded row and as many prior draws."""
    n_eval = default_n_eval(X.shape[0]) if n_eval is None else n_eval
    if n_eval < 2:
        raise ValueError(f"mmd_metric: need n_eval >= 2, got {n_eval}")
    Xs = _subset(np.asarray(X, dtype=np.float64), n_eval, rng)
    enc = encode(model, params.constants(), Xs)
    z = enc.mu.data + np.exp(0.5 * enc.log_var.data) * rng.standard_normal(enc.mu.shape)
    return mmd(z, prior.sample(Xs.shape[0], rng), scales).item()


def loglik_proxy(model: VAE, params: ParamSet, X: np.ndarray, L: int, rng: np.random.Generator) -> float:
    """Mean of ``-reconstruction_loss`` with ``L`` latent draws per row.

    This is a proxy for the log-likelihood, not a bound on it.
    """
    if L < 1:
        raise ValueError(f"loglik_proxy: L must be at least 1, got {L}")
    P = params.constants()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total = 0.0
    for x in X:
        enc = encode(model, P, x)
        total += reconstruction_loss(model, P, x, enc, rng.standard_normal((L, model.latent_dim))).item()
    return -total / X.shape[0]


def reverse_kl_metric(
    model: VAE, params: ParamSet, X: np.ndarray, prior: Prior, rng: np.random.Generator, n_eval: int | None = None
) -> float:
    """Reverse-KL estimate with the aggregate posterior over ``n_eval`` rows."""
    n_eval = default_n_eval(X.shape[0]) if n_eval is None else n_eval
    Xs = _subset(np.asarray(X, dtype=np.float64), n_eval, rng)
    enc = encode(model, params.constants(), Xs)
    return reverse_kl_from_draws(prior, EncoderOutput(enc.mu, enc.log_var), prior.sample(Xs.shape[0], rng)).item()
