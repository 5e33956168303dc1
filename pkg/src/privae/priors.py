"""Prior distributions over the latent space.

Each prior exposes ``log_prob`` on tensors (differentiable in ``z``),
``log_density`` on plain arrays, and ``sample``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import LOG_2PI, Tensor, as_tensor, concat, gaussian_log_density


def _check_dim(z: Tensor, dim: int) -> None:
    if z.ndim == 0 or z.shape[-1] != dim:
        raise ValueError(f"log_density: expected latent dimension {dim}, got shape {z.shape}")


@dataclass(frozen=True)
class StandardNormal:
    dim: int

    def log_prob(self, z) -> Tensor:
        z = as_tensor(z)
        _check_dim(z, self.dim)
        return (z.square().sum(axis=-1) + self.dim * LOG_2PI) * -0.5

    def log_density(self, z) -> np.ndarray | float:
        return _to_numpy(self.log_prob(np.asarray(z, dtype=np.float64)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def moments(self):
        return np.zeros(self.dim), np.ones(self.dim)


@dataclass(frozen=True)
class SpikeSlab:
    """Per-dimension mixture ``(1-gamma) N(0, 1) + gamma N(0, sigma0_sq)``.

    ``gamma`` is the weight of the narrow "off" component.
    """

    dim: int
    gamma: float = 0.8
    sigma0_sq: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"SpikeSlab: gamma must lie in [0, 1], got {self.gamma}")
        if not self.sigma0_sq > 0:
            raise ValueError(f"SpikeSlab: sigma0_sq must be positive, got {self.sigma0_sq}")

    def log_prob(self, z) -> Tensor:
        z = as_tensor(z)
        _check_dim(z, self.dim)
        sq = z.square()
        # two-term log-sum-exp per dimension; empty components are dropped
        terms = []
        if self.gamma < 1.0:
            terms.append(sq * -0.5 + (math.log1p(-self.gamma) - 0.5 * LOG_2PI))
        if self.gamma > 0.0:
            c = math.log(self.gamma) - 0.5 * (LOG_2PI + math.log(self.sigma0_sq))
            terms.append(sq * (-0.5 / self.sigma0_sq) + c)
        if len(terms) == 1:
            per_dim = terms[0]
        else:
            stacked = concat([t.reshape(t.shape + (1,)) for t in terms], axis=-1)
            per_dim = stacked.logsumexp(axis=-1)
        return per_dim.sum(axis=-1)

    def log_density(self, z):
        return _to_numpy(self.log_prob(np.asarray(z, dtype=np.float64)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        spike = rng.random((n, self.dim)) < self.gamma
        scale = np.where(spike, math.sqrt(self.sigma0_sq), 1.0)
        return rng.standard_normal((n, self.dim)) * scale

    def moments(self):
        var = (1.0 - self.gamma) + self.gamma * self.sigma0_sq
        return np.zeros(self.dim), np.full(self.dim, var)


@dataclass(frozen=True)
class GaussMixture:
    """Mixture of ``K`` diagonal Gaussians with weights ``weights``."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    _log_w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        sd = np.asarray(self.stds, dtype=np.float64)
        sd = np.broadcast_to(sd, mu.shape).copy() if sd.ndim < 2 else sd
        if w.ndim != 1 or w.shape[0] != mu.shape[0] or sd.shape != mu.shape:
            raise ValueError(
                f"GaussMixture: inconsistent shapes weights {w.shape}, means {mu.shape}, stds {sd.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"GaussMixture: weights must be nonnegative and sum to 1, got {w}")
        if np.any(sd <= 0):
            raise ValueError("GaussMixture: all standard deviations must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_w", np.log(w))

    @classmethod
    def corners(cls, n_components: int = 4, dim: int = 2, std: float = 0.03) -> "GaussMixture":
        """Equal-weight components centred on vertices of ``{0, 1}^dim``."""
        if n_components > 2**dim:
            raise ValueError(f"GaussMixture.corners: at most {2 ** dim} components in {dim} dimensions")
        means = [[(k >> (dim - 1 - d)) & 1 for d in range(dim)] for k in range(n_components)]
        return cls(np.full(n_components, 1.0 / n_components), np.array(means, float), np.full((n_components, dim), std))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def log_prob(self, z) -> Tensor:
        z = as_tensor(z)
        _check_dim(z, self.dim)
        zz = z.reshape(z.shape[:-1] + (1, self.dim))
        comp = gaussian_log_density(zz, self.means, 2.0 * np.log(self.stds)) + self._log_w
        return comp.logsumexp(axis=-1)

    def log_density(self, z):
        return _to_numpy(self.log_prob(np.asarray(z, dtype=np.float64)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[k] + self.stds[k] * rng.standard_normal((n, self.dim))

    def moments(self):
        mean = self.weights @ self.means
        second = self.weights @ (self.stds**2 + self.means**2)
        return mean, second - mean**2


Prior = StandardNormal | SpikeSlab | GaussMixture


def _to_numpy(t: Tensor):
    d = t.data
    return float(d) if d.ndim == 0 else d
