"""Gradient estimators and the relaxed objective builder."""

import logging
import math

import numpy as np
import pytest

from softbits import autodiff as ad
from softbits import estimators as est
from softbits import oracle
from softbits import relaxations as rx
from softbits.noise import RngStream


# -- multisample bound -----------------------------------------------------------

def test_single_weight_passes_through():
    assert est.multisample_bound(np.array([-3.2])) == pytest.approx(-3.2)


def test_equal_weights_collapse():
    assert est.multisample_bound(np.full(7, 1.5)) == pytest.approx(1.5, rel=1e-12)


def test_bound_monotone_in_sample_count():
    """More samples tighten the Monte Carlo bound on a tiny enumerable model."""
    log_w_states = np.array([-2.0, -0.3, -1.1, -0.7])
    probs = np.full(4, 0.25)
    r = RngStream(21, 0)
    reps = 10_000

    def bounds(m):
        u = r.uniform((reps, m))
        z = np.searchsorted(np.cumsum(probs), u)
        lw = log_w_states[z].reshape(reps, m)
        return ad.np_logsumexp(lw, axis=-1) - math.log(m)

    b1, b5 = bounds(1), bounds(5)
    se = math.sqrt(b1.var() / reps + b5.var() / reps)
    assert b5.mean() - b1.mean() > -3 * se


def test_bound_on_tape_differentiates():
    tape = ad.Tape()
    lw = tape.leaf(np.array([-1.0, -2.0, -0.5]))
    out = est.multisample_bound(lw)
    ad.backward(out)
    np.testing.assert_allclose(lw.grad.sum(), 1.0, rtol=1e-12)


# -- pathwise ---------------------------------------------------------------------

def test_constant_loss_zero_gradient():
    def builder(nodes, rng, m):
        return ad.amean(0.0 * nodes["w"] + 3.0)

    out = est.pathwise_gradient(builder, {"w": np.array([1.0, 2.0])}, RngStream(22, 0), 4)
    np.testing.assert_array_equal(out.grads["w"], np.zeros(2))
    assert out.value == pytest.approx(3.0)


def test_pathwise_matches_crn_differences():
    lam, m = 0.6, 5000
    noise = RngStream(23, 0).logistic((m,))

    def builder(nodes, rng, m_):
        x = rx.binary_concrete_sample(
            ad.broadcast_to(ad.reshape(nodes["s"], (1,)), (m_,)), lam, None, noise=noise)
        return ad.amean(x)

    got = est.pathwise_gradient(builder, {"s": np.array([0.25])}, RngStream(23, 1), m)

    def crn(v):
        return float(np.mean(rx.binary_concrete_sample(
            np.broadcast_to(v, (m,)), lam, None, noise=noise)))

    fd = oracle.finite_difference(crn, np.array([0.25]))
    assert abs(got.grads["s"][0] - fd[0]) / abs(fd[0]) < 1e-4


def test_pathwise_mean_matches_high_sample_reference():
    """The estimator is unbiased for the relaxed objective: smaller-m
    estimates match a very large-m reference within Monte Carlo error."""
    lam, s0 = 0.8, 0.4

    def grad_with(m, stream_id):
        noise = RngStream(24, stream_id).logistic((m,))
        per_sample = ad.np_sigmoid((s0 + noise) / lam)
        der = per_sample * (1 - per_sample) / lam
        return der.mean(), der.std() / math.sqrt(m)

    ref, _ = grad_with(1_000_000, 0)
    got, se = grad_with(100_000, 1)
    assert abs(got - ref) < 3 * se


def test_pathwise_through_discrete_sampler_raises():
    def builder(nodes, rng, m):
        one = rx.discrete_sample(nodes["logits"], rng)
        return ad.amean(nodes["logits"] * one.vector())

    with pytest.raises(TypeError, match="not differentiable"):
        est.pathwise_gradient(builder, {"logits": np.zeros(3)}, RngStream(25, 0), 1)


def test_low_temperature_gradient_approaches_discrete_limit():
    """At temperature near zero, the pathwise gradient of E[X_1] approaches
    the derivative of the zero-temperature probability sigmoid(s)."""
    s0, lam, m = 0.3, 0.01, 200_000
    noise = RngStream(26, 0).logistic((m,))
    per_sample = ad.np_sigmoid((s0 + noise) / lam)
    der = per_sample * (1 - per_sample) / lam
    exact = ad.np_sigmoid(s0) * (1 - ad.np_sigmoid(s0))
    se = der.std() / math.sqrt(m)
    assert abs(der.mean() - exact) < 3 * se + 1e-4


# -- score function ----------------------------------------------------------------

def _four_state_setup():
    f_table = np.array([1.0, 2.0, 3.0, 4.0])

    def sampler(params, rng, m):
        return rx.discrete_sample_indices(np.broadcast_to(params["logits"], (m, 4)), rng)

    def log_mass_fn(nodes, samples):
        lg = ad.broadcast_to(ad.reshape(nodes["logits"], (1, 4)), (len(samples), 4))
        return rx.discrete_log_mass(lg, samples)

    return f_table, sampler, log_mass_fn


def test_score_function_matches_enumeration():
    f_table, sampler, log_mass_fn = _four_state_setup()
    logits = np.array([0.2, -0.1, 0.4, 0.0])
    exact = oracle.exact_gradient(oracle.EnumeratedModel.from_logits(logits), f_table)
    m = 100_000
    got = est.score_function_gradient(sampler, log_mass_fn, lambda s: f_table[s],
                                      {"logits": logits}, None, RngStream(27, 0), m)
    # SE bound from the bounded per-sample contributions
    assert np.max(np.abs(got.grads["logits"] - exact)) < 0.05
    assert got.value == pytest.approx(
        float(np.exp(logits - ad.np_logsumexp(logits, axis=-1)) @ f_table), abs=0.05)


def test_constant_objective_with_matching_baseline_gives_zero_gradient():
    f_table, sampler, log_mass_fn = _four_state_setup()
    state = est.BaselineState(value=7.0)
    got = est.score_function_gradient(sampler, log_mass_fn, lambda s: np.full(len(s), 7.0),
                                      {"logits": np.zeros(4)}, state, RngStream(28, 0), 1000)
    np.testing.assert_array_equal(got.grads["logits"], np.zeros(4))
    assert state.value == pytest.approx(7.0)


def test_baseline_reduces_variance_same_mean():
    f_table, sampler, log_mass_fn = _four_state_setup()
    m = 50_000
    samples = sampler({"logits": np.zeros(4)}, RngStream(29, 0), m)
    fs = f_table[samples]
    onehots = np.eye(4)[samples]
    contrib_raw = fs[:, None] * (onehots - 0.25)
    contrib_base = (fs - fs.mean())[:, None] * (onehots - 0.25)
    se = np.sqrt(contrib_raw.var(axis=0) / m + contrib_base.var(axis=0) / m)
    assert np.all(np.abs(contrib_raw.mean(0) - contrib_base.mean(0)) < 3 * se + 1e-9)
    assert contrib_base.var(axis=0).sum() < contrib_raw.var(axis=0).sum()


def test_baseline_state_ema():
    state = est.BaselineState(rate=0.9)
    state.update(10.0)
    assert state.value == pytest.approx(1.0)
    state.update(10.0)
    assert state.value == pytest.approx(1.9)
    frozen = est.BaselineState(enabled=False)
    frozen.update(5.0)
    assert frozen.value == 0.0


def test_score_function_and_pathwise_agree_at_low_temperature():
    """On the binary toy the discrete-graph score-function gradient and the
    relaxed pathwise gradient coincide as the temperature vanishes."""
    s0 = 0.3
    m = 400_000

    # pathwise at lambda = 0.01
    noise = RngStream(30, 0).logistic((m,))
    per = ad.np_sigmoid((s0 + noise) / 0.01)
    path_grad = (per * (1 - per) / 0.01)
    # score function on the discrete graph, f(X) = X
    u = RngStream(30, 1).uniform((m,))
    xs = (u < ad.np_sigmoid(s0)).astype(np.float64)
    score = xs * (1 - ad.np_sigmoid(s0)) + (1 - xs) * (-ad.np_sigmoid(s0))
    sfe_grad = xs * score
    se = math.sqrt(path_grad.var() / m + sfe_grad.var() / m)
    assert abs(path_grad.mean() - sfe_grad.mean()) < 5 * se


def test_pathwise_bias_shrinks_with_temperature():
    """Trend: the relaxed gradient's bias against the discrete-graph
    gradient decreases as the temperature drops."""
    s0 = 0.3
    discrete_grad = ad.np_sigmoid(s0) * (1 - ad.np_sigmoid(s0))
    m = 500_000
    noise = RngStream(37, 0).logistic((m,))
    bias = []
    for lam in (2.0, 0.5, 0.05):
        per = ad.np_sigmoid((s0 + noise) / lam)
        grad = per * (1 - per) / lam
        bias.append(abs(grad.mean() - discrete_grad))
    assert bias[0] > bias[1] > bias[2]
    assert bias[2] < 0.01


# -- relaxed objective ---------------------------------------------------------------

def _identity_vae(n_groups, arity, prior_logits):
    """Encoder emitting the prior logits regardless of input; decoder
    ignoring the code."""
    def encoder(x):
        return np.broadcast_to(prior_logits, (x.shape[0], n_groups, arity)).copy()

    def decoder(z):
        return np.zeros(rx._values(z).shape[0])

    return encoder, decoder


def test_matching_posterior_and_prior_gives_zero_bound():
    cfg = est.ObjectiveConfig(m=1, posterior_temperature=0.7, prior_temperature=0.7)
    prior = np.array([[0.3, -0.2]])
    encoder, decoder = _identity_vae(1, 2, prior)
    x = np.zeros((4000, 3))
    val = est.relaxed_objective(x, encoder, decoder, prior, cfg, RngStream(31, 0))
    # exact zero per sample: identical densities cancel
    assert float(np.asarray(val)) == pytest.approx(0.0, abs=1e-12)


def test_matching_nary_distributions_give_zero_bound():
    cfg = est.ObjectiveConfig(m=3, posterior_temperature=0.9, prior_temperature=0.9)
    prior = np.array([[0.3, -0.2, 0.6, 0.0]])
    encoder, decoder = _identity_vae(1, 4, prior)
    val = est.relaxed_objective(np.zeros((2000, 3)), encoder, decoder, prior, cfg,
                                RngStream(32, 0))
    assert float(np.asarray(val)) == pytest.approx(0.0, abs=1e-12)


def test_analytic_kl_term_matches_enumeration(caplog):
    """The analytic variant adds exactly the enumerated discrete KL."""
    prior = np.array([[0.5, -0.5]])
    post = np.array([[1.0, 0.2]])

    def encoder(x):
        return np.broadcast_to(post, (x.shape[0], 1, 2)).copy()

    def decoder(z):
        return np.zeros(rx._values(z).shape[0])

    x = np.zeros((500, 3))
    with caplog.at_level(logging.WARNING):
        cfg = est.ObjectiveConfig(m=1, relaxation_mode="analytic_kl",
                                  posterior_temperature=0.7, prior_temperature=0.7)
        val = est.relaxed_objective(x, encoder, decoder, prior, cfg, RngStream(33, 0))
    assert "not interpretable" in caplog.text

    lp = prior[0] - ad.np_logsumexp(prior[0], axis=-1)
    lq = post[0] - ad.np_logsumexp(post[0], axis=-1)
    exact_kl_term = float(np.exp(lq) @ (lp - lq))
    assert float(np.asarray(val)) == pytest.approx(exact_kl_term, abs=1e-12)


def test_relaxed_log_mass_mode_runs_and_warns(caplog):
    prior = np.array([[0.5, -0.5]])
    encoder, decoder = _identity_vae(1, 2, prior)
    with caplog.at_level(logging.WARNING):
        cfg = est.ObjectiveConfig(m=2, relaxation_mode="relaxed_log_mass")
        est.relaxed_objective(np.zeros((100, 3)), encoder, decoder, prior, cfg,
                              RngStream(34, 0))
    assert "not interpretable" in caplog.text


def test_log_weight_clamp_counts():
    cfg = est.ObjectiveConfig(m=1)
    prior = np.array([[0.0, 0.0]])

    def encoder(x):
        return np.broadcast_to(prior, (x.shape[0], 1, 2)).copy()

    def decoder(z):
        return np.full(rx._values(z).shape[0], -1e9)

    diag = {}
    val = est.relaxed_objective(np.zeros((8, 3)), encoder, decoder, prior, cfg,
                                RngStream(35, 0), diagnostics=diag)
    assert diag["clamp_count"] == 8
    assert float(np.asarray(val)) == pytest.approx(-est.LOG_WEIGHT_CLAMP)


def test_objective_config_validation():
    with pytest.raises(ValueError, match="one objective sample"):
        est.ObjectiveConfig(m=0)
    with pytest.raises(ValueError, match="relaxation mode"):
        est.ObjectiveConfig(relaxation_mode="nope")
    with pytest.raises(ValueError, match="temperature"):
        est.ObjectiveConfig(posterior_temperature=-1.0)


def test_grad_estimate_keys_match_parameters():
    def builder(nodes, rng, m):
        return ad.amean(nodes["a"] * 2.0) + ad.amean(nodes["b"])

    params = {"a": np.ones(3), "b": np.zeros(2)}
    out = est.pathwise_gradient(builder, params, RngStream(36, 0), 1)
    assert set(out.grads) == set(params)
