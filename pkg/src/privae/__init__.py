"""Differentially private VAE training with term-wise DP-SGD."""

from .accountant import compose_sequential, epsilon_for_sigma, sigma_for_budget, termwise_budget
from .autodiff import ParamSet, Tensor, gradient, per_sample_gradients, value_and_grad
from .divergences import DivergenceSpec, cauchy_kernel, mmd, psi, reverse_kl_estimate
from .dp import (
    ClipConfig,
    PartitionPlan,
    batchagg_gradient,
    clip,
    kappa,
    microagg_gradient,
    partition_batch,
    sgd_step,
    termwise_gradient,
)
from .metrics import hoyer, loglik_proxy, mmd_metric, sparsity
from .model import VAE, encode, kld_term, phi, reconstruction_loss, reparameterize
from .priors import GaussMixture, SpikeSlab, StandardNormal

__version__ = "0.1.0"
