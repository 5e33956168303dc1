import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import assert_grad_close, small_model
from privae.autodiff import Tensor, numerical_gradient, value_and_grad
from privae.divergences import (
    DEFAULT_SCALES,
    DivergenceSpec,
    cauchy_kernel,
    mmd,
    psi,
    reverse_kl_estimate,
    reverse_kl_from_draws,
)
from privae.model import EncoderOutput
from privae.priors import GaussMixture, SpikeSlab, StandardNormal


def _oracle_kernel(x, y, scales):
    return math.fsum(s / (s + (xd - yd) ** 2) for xd, yd in zip(x, y) for s in scales)


def _oracle_mmd(A, B, scales):
    n, m = len(A), len(B)
    aa = math.fsum(_oracle_kernel(a, a2, scales) for a in A for a2 in A) / (n * n)
    bb = math.fsum(_oracle_kernel(b, b2, scales) for b in B for b2 in B) / (m * m)
    ab = math.fsum(_oracle_kernel(a, b, scales) for a in A for b in B) / (n * m)
    return aa + bb - 2.0 * ab


def test_kernel_zero_distance():
    assert cauchy_kernel(np.array([0.3]), np.array([0.3]), DEFAULT_SCALES) == 6.0
    assert cauchy_kernel(np.array([0.3, -1.0]), np.array([0.3, -1.0]), DEFAULT_SCALES) == 12.0


def test_kernel_unit_distance():
    assert cauchy_kernel(np.array([0.0]), np.array([1.0]), (1.0,)) == 0.5


def test_mmd_identical_sets_is_zero(rng):
    Z = rng.normal(size=(7, 3))
    assert abs(mmd(Z, Z).item()) <= 1e-12
    assert abs(mmd(Z, Z[::-1]).item()) <= 1e-12


def test_mmd_hand_value():
    assert mmd(np.array([[0.0]]), np.array([[1.0]]), (1.0,)).item() == pytest.approx(1.0, abs=1e-15)


def test_mmd_matches_double_loop_oracle():
    for seed in range(50):
        r = np.random.default_rng(seed)
        n, m, D = r.integers(1, 9), r.integers(1, 9), r.integers(1, 5)
        A, B = r.normal(size=(n, D)), r.normal(size=(m, D)) * 2 + 0.5
        assert mmd(A, B).item() == pytest.approx(_oracle_mmd(A, B, DEFAULT_SCALES), abs=1e-12)


_sets = arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2)), elements=st.floats(-5, 5))


@settings(max_examples=200, deadline=None)
@given(A=_sets, B=_sets)
def test_mmd_symmetric_and_nonnegative(A, B):
    ab, ba = mmd(A, B).item(), mmd(B, A).item()
    assert ab == ba
    assert ab >= -1e-12


def test_mmd_dimension_mismatch():
    with pytest.raises(ValueError):
        mmd(np.zeros((2, 2)), np.zeros((2, 3)))


def _enc(mu, lv):
    return EncoderOutput(Tensor(np.atleast_2d(mu)), Tensor(np.atleast_2d(lv)))


def test_reverse_kl_of_prior_with_itself_is_unbiased():
    mu, sd = np.array([0.4, -0.3]), np.array([0.7, 1.3])
    p = GaussMixture(np.array([1.0]), mu[None], sd[None])
    enc = _enc(mu, 2 * np.log(sd))
    vals = np.array([reverse_kl_estimate(p, enc, np.random.default_rng(s)).item() for s in range(10_000)])
    assert abs(vals.mean()) <= 3 * vals.std() / math.sqrt(vals.size) + 1e-15


def test_reverse_kl_duplicate_components_collapse(rng):
    z = rng.normal(size=(2, 2))
    mu, lv = rng.normal(size=2), rng.normal(size=2) * 0.3
    one = reverse_kl_from_draws(StandardNormal(2), _enc(mu, lv), z[:1]).item()
    two = reverse_kl_from_draws(StandardNormal(2), _enc(np.stack([mu, mu]), np.stack([lv, lv])), z[:1]).item()
    assert two == pytest.approx(one, abs=1e-12)


def test_reverse_kl_far_encoder_is_large():
    enc = _enc(np.full((3, 2), 100.0), np.zeros((3, 2)))
    val = reverse_kl_estimate(GaussMixture.corners(), enc, np.random.default_rng(0)).item()
    assert val > 1000


def test_reverse_kl_no_overflow_at_large_offsets(rng):
    enc = _enc(np.full((4, 2), 1e3), np.full((4, 2), -10.0))
    val = reverse_kl_estimate(StandardNormal(2), enc, rng).item()
    assert np.isfinite(val) and val > 0


def test_reverse_kl_literal_form(rng):
    enc = _enc(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)) * 0.2)
    z = rng.normal(size=(3, 2))
    norm = reverse_kl_from_draws(StandardNormal(2), enc, z).item()
    lit = reverse_kl_from_draws(StandardNormal(2), enc, z, literal=True).item()
    assert lit == pytest.approx(3 * (norm - math.log(3)), rel=1e-12)


@pytest.mark.parametrize("kind", ["mmd", "reverse_kl"])
def test_psi_alpha_zero(kind, rng):
    model = small_model()
    P = model.init_params(rng).constants()
    X = rng.normal(size=(2, 3))
    out = psi(DivergenceSpec(kind, 0.0), model, P, X, StandardNormal(2), rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    assert out.item() == 0.0


def test_psi_kind_none_rejected(rng):
    model = small_model()
    with pytest.raises(ValueError):
        psi(DivergenceSpec("none"), model, model.init_params(rng).constants(), np.zeros((2, 3)), StandardNormal(2), None, None)


@pytest.mark.parametrize("kind,prior", [("mmd", SpikeSlab(2)), ("reverse_kl", GaussMixture.corners(4, 2, 0.3))])
def test_psi_gradient_matches_finite_differences(kind, prior, rng):
    model = small_model()
    params = model.init_params(rng)
    X, eps, draws = rng.normal(size=(2, 3)), rng.normal(size=(2, 2)), prior.sample(2, rng)
    spec = DivergenceSpec(kind, 3.0)

    def f(P):
        return psi(spec, model, P, X, prior, eps, draws)

    _, g = value_and_grad(f, params)
    assert_grad_close(g, numerical_gradient(lambda p: f(p.constants()).item(), params))


@pytest.mark.parametrize("kind", ["mmd", "reverse_kl"])
def test_psi_depends_only_on_its_partition(kind, rng):
    model = small_model()
    P = model.init_params(rng).constants()
    X = rng.normal(size=(6, 3))
    eps, draws = rng.normal(size=(6, 2)), rng.normal(size=(3, 2))
    members = np.array([0, 2, 4])
    spec = DivergenceSpec(kind, 1.0)
    before = psi(spec, model, P, X[members], StandardNormal(2), eps[members], draws).item()
    X2 = X.copy()
    X2[1] = 100.0
    after = psi(spec, model, P, X2[members], StandardNormal(2), eps[members], draws).item()
    assert before == after


@pytest.mark.parametrize("kind", ["mmd", "reverse_kl"])
def test_psi_permutation_invariant(kind, rng):
    model = small_model()
    P = model.init_params(rng).constants()
    X, eps, draws = rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    perm = rng.permutation(5)
    spec = DivergenceSpec(kind, 1.0)
    a = psi(spec, model, P, X, StandardNormal(2), eps, draws).item()
    b = psi(spec, model, P, X[perm], StandardNormal(2), eps[perm], draws).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_divergence_spec_validation():
    with pytest.raises(ValueError):
        DivergenceSpec("wasserstein", 1.0)
    with pytest.raises(ValueError):
        DivergenceSpec("mmd", -1.0)
    assert not DivergenceSpec("none").active and DivergenceSpec("mmd", 1.0).active
