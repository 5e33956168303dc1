"""Closed-form privacy bookkeeping for DP-SGD runs.

Uses the relation ``sigma >= c2 * q * sqrt(T ln(1/delta)) / epsilon`` at
equality, with the constant ``c2`` left to the caller (default 1). This is
an upper-bound style ledger, not a tight moments accountant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .dp import kappa


def _check(epsilon=None, delta=None, q=None, T=None, c2_const=None, sigma=None) -> None:
    if epsilon is not None and not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if delta is not None and not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if q is not None and not 0.0 < q <= 1.0:
        raise ValueError(f"sampling probability q must lie in (0, 1], got {q}")
    if T is not None and not T >= 1:
        raise ValueError(f"number of steps T must be at least 1, got {T}")
    if c2_const is not None and not c2_const > 0:
        raise ValueError(f"accountant constant c2 must be positive, got {c2_const}")
    if sigma is not None and not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def sigma_for_budget(epsilon: float, delta: float, q: float, T: int, c2_const: float = 1.0) -> float:
    _check(epsilon, delta, q, T, c2_const)
    return c2_const * q * math.sqrt(T * math.log(1.0 / delta)) / epsilon


def epsilon_for_sigma(sigma: float, delta: float, q: float, T: int, c2_const: float = 1.0) -> float:
    _check(delta=delta, q=q, T=T, c2_const=c2_const, sigma=sigma)
    return c2_const * q * math.sqrt(T * math.log(1.0 / delta)) / sigma


def compose_sequential(budgets: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Sequential composition: component-wise sums of ``(epsilon_i, delta_i)``."""
    if not budgets:
        raise ValueError("compose_sequential: need at least one mechanism")
    return math.fsum(e for e, _ in budgets), math.fsum(d for _, d in budgets)


@dataclass
class PrivacyBudget:
    epsilon: float
    delta: float
    q: float
    T: int
    sigma_eps: float
    kappa: float = 1.0
    c2_const: float = 1.0
    mechanisms: list = field(default_factory=list)

    @property
    def sigma_prime(self) -> float:
        return self.kappa * self.sigma_eps

    def composed(self) -> tuple[float, float]:
        return compose_sequential(self.mechanisms)

    def to_dict(self) -> dict:
        eps, dlt = self.composed()
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "q": self.q,
            "T": self.T,
            "sigma_eps": self.sigma_eps,
            "kappa": self.kappa,
            "sigma_prime": self.sigma_prime,
            "c2_const": self.c2_const,
            "mechanisms": [list(m) for m in self.mechanisms],
            "composed": [eps, dlt],
        }


def termwise_budget(
    epsilon: float, delta: float, q: float, T: int, c2_const: float = 1.0, batch_branch: bool = True
) -> tuple[float, PrivacyBudget]:
    """Noise scale for term-wise DP-SGD and the budget split behind it.

    With a batch-wise branch each of the two noisy sums spends
    ``(epsilon/2, delta/2)`` and ``sigma' = kappa(delta) * sigma``;
    otherwise a single ``(epsilon, delta)`` mechanism with ``sigma' = sigma``.
    """
    sigma = sigma_for_budget(epsilon, delta, q, T, c2_const)
    k = kappa(delta, batch_branch)
    if batch_branch:
        mechanisms = [(epsilon / 2, delta / 2), (epsilon / 2, delta / 2)]
    else:
        mechanisms = [(epsilon, delta)]
    budget = PrivacyBudget(epsilon, delta, q, T, sigma, k, c2_const, mechanisms)
    return budget.sigma_prime, budget


class Ledger:
    """Running ``epsilon`` spent after each step of a fixed-noise run."""

    def __init__(self, sigma: float, delta: float, q: float, c2_const: float = 1.0):
        _check(delta=delta, q=q, c2_const=c2_const)
        self.sigma, self.delta, self.q, self.c2_const = sigma, delta, q, c2_const
        self.steps = 0

    def step(self) -> float | None:
        self.steps += 1
        return self.spent()

    def spent(self) -> float | None:
        """``None`` for a noiseless run (no finite guarantee)."""
        if self.steps == 0:
            return 0.0
        if self.sigma <= 0:
            return None
        return epsilon_for_sigma(self.sigma, self.delta, self.q, self.steps, self.c2_const)
