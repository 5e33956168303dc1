import math

import numpy as np
import pytest

from conftest import assert_grad_close, small_model
from privae.autodiff import ParamSet, Tensor, numerical_gradient, value_and_grad
from privae.model import (
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    VAE,
    EncoderOutput,
    analytic_kl_standard_normal,
    encode,
    generate,
    kld_term,
    phi,
    reconstruction_loss,
    reparameterize,
)
from privae.priors import SpikeSlab, StandardNormal

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _enc(mu, lv):
    return EncoderOutput(Tensor(np.asarray(mu, float)), Tensor(np.asarray(lv, float)))


def test_zero_heads_give_zero_posterior(rng):
    model = small_model()
    P = model.init_params(rng, zero_heads=True).constants()
    for x in rng.normal(size=(5, 3)):
        enc = encode(model, P, x)
        assert not enc.mu.data.any() and not enc.log_var.data.any()


def test_encode_is_deterministic(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    x = rng.normal(size=3)
    a, b = encode(model, P, x), encode(model, P, x)
    assert np.array_equal(a.mu.data, b.mu.data) and np.array_equal(a.log_var.data, b.log_var.data)


def test_encode_outputs_finite_and_clamped(rng):
    model = small_model()
    params = model.init_params(rng)
    # blow up the log-variance head so that the clamp is exercised
    arrays = dict(params.items())
    arrays["enc.logvar.W"] = arrays["enc.logvar.W"] * 1e3
    enc = encode(model, ParamSet(arrays).constants(), rng.normal(size=(50, 3)) * 5)
    assert np.all(np.isfinite(enc.mu.data))
    assert enc.log_var.data.min() >= LOG_VAR_MIN and enc.log_var.data.max() <= LOG_VAR_MAX
    assert enc.log_var.data.min() == LOG_VAR_MIN or enc.log_var.data.max() == LOG_VAR_MAX


def test_encode_dimension_mismatch(rng):
    model = small_model()
    with pytest.raises(ValueError):
        encode(model, model.init_params(rng).constants(), np.zeros(4))


def test_reparameterize_at_clamped_log_var():
    s = reparameterize(_enc([2.0, -1.0], [-10.0, -10.0]), eps=np.array([1.0, 1.0]))
    np.testing.assert_allclose(s.z.data - [2.0, -1.0], math.exp(-5.0), rtol=1e-12)
    assert math.exp(-5.0) == pytest.approx(6.737947e-3, rel=1e-6)


def test_reparameterize_zero_eps_returns_mean():
    assert np.array_equal(reparameterize(_enc([0.3, 0.7], [1.0, -2.0]), eps=np.zeros(2)).z.data, [0.3, 0.7])


def test_reparameterize_unit_std():
    assert np.array_equal(reparameterize(_enc([0.0, 0.0], [0.0, 0.0]), eps=np.array([1.0, -1.0])).z.data, [1.0, -1.0])


def test_latent_sample_identity(rng):
    mu, lv = rng.normal(size=4), rng.uniform(-3, 3, size=4)
    s = reparameterize(_enc(mu, lv), rng=rng)
    assert np.array_equal(s.z.data, mu + np.exp(0.5 * lv) * s.eps)


def _identity_decoder_model():
    """1-D Gaussian model whose decoder maps z to itself up to tanh saturation."""
    return VAE(1, 1, (1, 1), "gaussian")


def test_gaussian_perfect_reconstruction_is_zero(rng):
    model = small_model()
    params = model.init_params(rng)
    arrays = dict(params.items())
    for k in ("dec.out.W",):
        arrays[k] = np.zeros_like(arrays[k])
    x = rng.normal(size=3)
    arrays["dec.out.b"] = x.copy()
    P = ParamSet(arrays).constants()
    loss = reconstruction_loss(model, P, x, encode(model, P, x), rng.normal(size=(4, 2)))
    assert loss.item() == 0.0


def test_bernoulli_logit_zero_is_ln2(rng):
    model = VAE(1, 1, (2, 2), "bernoulli")
    arrays = dict(model.init_params(rng).items())
    arrays["dec.out.W"] = np.zeros_like(arrays["dec.out.W"])
    P = ParamSet(arrays).constants()
    x = np.array([1.0])
    loss = reconstruction_loss(model, P, x, encode(model, P, x), rng.normal(size=(1, 1)))
    assert loss.item() == pytest.approx(math.log(2.0), rel=1e-15)


def test_l_draw_loss_is_mean_of_single_draws(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    x = rng.normal(size=3)
    enc = encode(model, P, x)
    eps = np.random.default_rng(7).standard_normal((20, 2))
    full = reconstruction_loss(model, P, x, enc, eps).item()
    singles = [reconstruction_loss(model, P, x, enc, e[None]).item() for e in eps]
    assert full == pytest.approx(math.fsum(singles) / 20, rel=1e-12)


def test_zero_draws_rejected(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    x = np.zeros(3)
    with pytest.raises(ValueError):
        reconstruction_loss(model, P, x, encode(model, P, x), np.zeros((0, 2)))


def test_kld_zero_when_posterior_is_prior(rng):
    for z in rng.normal(size=(5, 2)):
        assert kld_term(_enc([0.0, 0.0], [0.0, 0.0]), z, StandardNormal(2)).item() == pytest.approx(0.0, abs=1e-15)


def test_kld_shifted_mean():
    val = kld_term(_enc([1.0], [0.0]), np.array([1.0]), StandardNormal(1)).item()
    assert val == pytest.approx(0.5, abs=1e-15)


def test_kld_spike_slab_at_origin():
    enc = _enc([0.0], [0.0])
    z = np.array([0.0])
    prior = SpikeSlab(1, 0.8, 0.05)
    assert (enc.mu + 0).data.size == 1
    log_q = -HALF_LOG_2PI
    log_p = math.log(0.2 / math.sqrt(2 * math.pi) + 0.8 / math.sqrt(2 * math.pi * 0.05))
    assert log_q == pytest.approx(-0.91894, abs=1e-5) and log_p == pytest.approx(0.41018, abs=1e-5)
    assert kld_term(enc, z, prior).item() == pytest.approx(log_q - log_p, abs=1e-13)
    assert kld_term(enc, z, prior).item() == pytest.approx(-1.32912, abs=1e-5)


def test_mc_kld_averages_to_analytic_kl():
    mu, lv = np.array([0.4, -1.2]), np.array([-0.5, 0.3])
    eps = np.random.default_rng(3).standard_normal((20000, 2))
    enc = _enc(mu, lv)
    vals = kld_term(enc, reparameterize(enc, eps=eps).z, StandardNormal(2)).data
    se = vals.std() / math.sqrt(vals.size)
    assert abs(vals.mean() - analytic_kl_standard_normal(mu, lv)) < 4 * se


def test_phi_beta_zero_is_reconstruction(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    x, eps = rng.normal(size=3), rng.normal(size=(3, 2))
    loss, terms = phi(model, P, x, StandardNormal(2), 0.0, eps)
    assert loss.item() == reconstruction_loss(model, P, x, encode(model, P, x), eps).item() == terms.rec


def test_phi_vanishes_for_perfect_reconstruction_and_q_equal_p(rng):
    model = small_model()
    arrays = dict(model.init_params(rng, zero_heads=True).items())
    arrays["dec.out.W"] = np.zeros_like(arrays["dec.out.W"])
    x = rng.normal(size=3)
    arrays["dec.out.b"] = x.copy()
    loss, terms = phi(model, ParamSet(arrays).constants(), x, StandardNormal(2), 1.0, rng.normal(size=(2, 2)))
    assert loss.item() == pytest.approx(0.0, abs=1e-15) and terms.rec == 0.0


def test_phi_composes_rec_and_kld(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    x, eps = rng.normal(size=3), rng.normal(size=(4, 2))
    prior = SpikeSlab(2)
    loss, terms = phi(model, P, x, prior, 1.0, eps)
    assert loss.item() == pytest.approx(terms.rec + terms.kld, rel=1e-12)
    loss3, terms3 = phi(model, P, x, prior, 3.0, eps)
    assert loss3.item() == pytest.approx(terms3.rec + 3.0 * terms3.kld, rel=1e-12)


@pytest.mark.parametrize("likelihood,prior", [("gaussian", StandardNormal(2)), ("bernoulli", SpikeSlab(2))])
def test_phi_gradient_matches_finite_differences(rng, likelihood, prior):
    model = small_model(likelihood=likelihood)
    params = model.init_params(rng)
    x = (rng.random(3) < 0.5).astype(float) if likelihood == "bernoulli" else rng.normal(size=3)
    eps = rng.normal(size=(3, 2))

    def f(P):
        return phi(model, P, x, prior, 1.0, eps)[0]

    _, g = value_and_grad(f, params)
    assert_grad_close(g, numerical_gradient(lambda p: f(p.constants()).item(), params))


def test_phi_in_batch_equals_phi_alone(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    X, eps = rng.normal(size=(6, 3)), rng.normal(size=(6, 2, 2))
    alone = phi(model, P, X[2], StandardNormal(2), 1.0, eps[2])[0].item()
    # evaluating other samples first must not perturb sample 2
    for i in range(6):
        val = phi(model, P, X[i], StandardNormal(2), 1.0, eps[i])[0].item()
        if i == 2:
            assert val == alone


def test_more_draws_do_not_change_expected_reconstruction(rng):
    model = small_model()
    P = model.init_params(rng).constants()
    x = rng.normal(size=3)
    enc = encode(model, P, x)
    l1, l20 = [], []
    for seed in range(1000):
        r = np.random.default_rng(seed)
        l1.append(reconstruction_loss(model, P, x, enc, r.standard_normal((1, 2))).item())
        l20.append(reconstruction_loss(model, P, x, enc, r.standard_normal((20, 2))).item())
    l1, l20 = np.array(l1), np.array(l20)
    pooled = math.sqrt(l1.var(ddof=1) / l1.size + l20.var(ddof=1) / l20.size)
    assert abs(l1.mean() - l20.mean()) <= 3 * pooled


def test_generate_empty(rng):
    model = small_model()
    out = generate(model, model.init_params(rng), StandardNormal(2), 0, rng)
    assert out.shape == (0, 3)


def test_generate_deterministic(rng):
    model = small_model()
    params = model.init_params(rng)
    a = generate(model, params, StandardNormal(2), 10, np.random.default_rng(5))
    b = generate(model, params, StandardNormal(2), 10, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_generate_zero_weight_decoder_outputs_bias(rng):
    model = small_model()
    arrays = dict(model.init_params(rng).items())
    for k in ("dec.l1.W", "dec.l2.W", "dec.out.W"):
        arrays[k] = np.zeros_like(arrays[k])
    arrays["dec.out.b"] = np.array([0.5, -1.0, 2.0])
    out = generate(model, ParamSet(arrays), StandardNormal(2), 100, rng)
    assert np.array_equal(out, np.tile([0.5, -1.0, 2.0], (100, 1)))


def test_check_params_rejects_wrong_architecture(rng):
    with pytest.raises(ValueError):
        small_model(hidden=(5, 4)).check_params(small_model(hidden=(6, 4)).init_params(rng))


def test_init_bounds_and_zero_biases(rng):
    model = small_model()
    params = model.init_params(rng)
    for name, fan_in, _ in model.layer_shapes():
        assert np.abs(params[name + ".W"]).max() <= math.sqrt(6.0 / fan_in)
        assert not params[name + ".b"].any()
