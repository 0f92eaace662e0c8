"""Gradient estimators and variational objective builders.

Two routes to a gradient through a stochastic node:

* :func:`pathwise_gradient` differentiates straight through a relaxed
  (reparameterized) sampler with the noise held fixed; unbiased for the
  relaxed objective.
* :func:`score_function_gradient` weights the gradient of the log-mass by
  the objective value, with a running-mean baseline; needs no
  differentiability in the sample.

:func:`relaxed_objective` assembles the m-sample relaxed variational bound
for a single stochastic layer, with the stochastic node kept in log space
(log-simplex node for arity > 2, pre-sigmoid logit node for arity 2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from softbits import autodiff as ad
from softbits import relaxations as rx
from softbits.noise import RngStream

log = logging.getLogger(__name__)

RELAXATION_MODES = ("relaxed_kl", "relaxed_log_mass", "analytic_kl")
LOG_WEIGHT_CLAMP = 500.0


@dataclass
class ObjectiveConfig:
    m: int = 1
    relaxation_mode: str = "relaxed_kl"
    posterior_temperature: float = 2.0 / 3.0
    prior_temperature: float = 0.5

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one objective sample")
        if self.relaxation_mode not in RELAXATION_MODES:
            raise ValueError(f"unknown relaxation mode {self.relaxation_mode!r}")
        rx.check_temperature(self.posterior_temperature)
        rx.check_temperature(self.prior_temperature)


@dataclass
class BaselineState:
    """Scalar running mean of the objective, EMA with the given rate."""

    value: float = 0.0
    rate: float = 0.9
    enabled: bool = True

    def update(self, observed: float):
        if self.enabled:
            self.value = self.rate * self.value + (1.0 - self.rate) * float(observed)


@dataclass
class GradEstimate:
    value: float
    grads: dict[str, np.ndarray]
    diagnostics: dict = field(default_factory=dict)


def multisample_bound(log_weights):
    """log(mean of weights) from log-weights: logsumexp(log w) - log m."""
    if isinstance(log_weights, ad.NodeRef):
        m = log_weights.value.shape[-1]
        return ad.logsumexp(log_weights, axis=-1) - np.log(m)
    log_weights = np.asarray(log_weights, dtype=np.float64)
    return ad.np_logsumexp(log_weights, axis=-1) - np.log(log_weights.shape[-1])


def pathwise_gradient(loss_builder, params: dict[str, np.ndarray],
                      rng: RngStream, m: int) -> GradEstimate:
    """Gradient of a Monte Carlo objective by differentiating through the
    reparameterized samplers with noise held fixed.

    ``loss_builder(nodes, rng, m)`` must build the m-sample objective as a
    scalar node using only differentiable primitives downstream of the noise
    draws; sampling a non-relaxed discrete node raises.
    """
    tape = ad.Tape()
    nodes = {k: tape.leaf(v) for k, v in params.items()}
    objective = loss_builder(nodes, rng, m)
    ad.backward(objective)
    grads = {k: ad.grad_or_zero(n) for k, n in nodes.items()}
    return GradEstimate(float(objective.value), grads)


def score_function_gradient(sampler, log_mass_fn, f, params: dict[str, np.ndarray],
                            baseline_state: BaselineState | None,
                            rng: RngStream, m: int) -> GradEstimate:
    """REINFORCE-style estimator (1/m) sum_s (f(x_s) - b) d log p(x_s) / d phi.

    ``sampler(params, rng, m)`` draws m samples from p_phi (no gradient),
    ``log_mass_fn(nodes, samples)`` rebuilds their log-masses on a tape, and
    ``f(samples)`` scores them (any function, no differentiability needed).
    The scalar baseline b is read before the update and updated with the
    sample mean of f afterwards.
    """
    samples = sampler(params, rng, m)
    fs = np.asarray(f(samples), dtype=np.float64)
    if fs.shape != (m,):
        raise ValueError(f"f must score each of the {m} samples, got shape {fs.shape}")
    b = baseline_state.value if baseline_state is not None and baseline_state.enabled else 0.0
    weights = fs - b

    tape = ad.Tape()
    nodes = {k: tape.leaf(v) for k, v in params.items()}
    log_mass = log_mass_fn(nodes, samples)
    if log_mass.value.shape != (m,):
        raise ValueError("log_mass_fn must return one value per sample")
    surrogate = ad.amean(log_mass * weights)
    ad.backward(surrogate)
    grads = {k: ad.grad_or_zero(n) for k, n in nodes.items()}

    value = float(np.mean(fs))
    if baseline_state is not None:
        baseline_state.update(value)
    return GradEstimate(value, grads, {"per_sample_weights": weights, "baseline": b})


def _clamp_log_weights(log_w, diagnostics: dict | None):
    clamped = int(np.sum(np.abs(rx._values(log_w)) > LOG_WEIGHT_CLAMP))
    if diagnostics is not None:
        diagnostics["clamp_count"] = diagnostics.get("clamp_count", 0) + clamped
    return ad.clip(log_w, -LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP)


def relaxed_objective(x: np.ndarray, encoder, decoder, prior_logits,
                      cfg: ObjectiveConfig, rng: RngStream,
                      diagnostics: dict | None = None):
    """m-sample relaxed variational bound for one stochastic layer, as a
    scalar node (mean over the batch of per-datapoint bounds).

    ``encoder(x_tiled)`` returns posterior logits (mB, G, n) on a tape;
    ``prior_logits`` is a node or array (G, n); ``decoder(z)`` maps the
    relaxed sample -- (mB, G) of sigmoids for n = 2, (mB, G, n) simplex
    points otherwise -- to per-datapoint log-likelihoods (mB,).

    The default mode relaxes both mass terms to the matching log-densities
    (the only variant guaranteed to stay a lower bound); the other modes
    substitute the relaxed or analytic discrete KL term and are logged as
    not interpretable as bounds.
    """
    if cfg.relaxation_mode != "relaxed_kl":
        log.warning("relaxation mode %r does not lower-bound the evidence; "
                    "its value is not interpretable", cfg.relaxation_mode)
    m = cfg.m
    batch = x.shape[0]
    x_tiled = np.repeat(x[None, ...], m, axis=0).reshape(m * batch, *x.shape[1:])
    post_logits = encoder(x_tiled)
    n = rx._values(post_logits).shape[-1]
    lam1, lam2 = cfg.posterior_temperature, cfg.prior_temperature

    if n == 2:
        s_post = post_logits[..., 1] - post_logits[..., 0]
        s_prior = prior_logits[..., 1] - prior_logits[..., 0]
        y = rx.binary_logit_sample(s_post, lam1, rng)
        z = ad.sigmoid(y)
        post_term = ad.asum(rx.binary_logit_log_density(s_post, lam1, y), axis=-1)
        prior_term = ad.asum(rx.binary_logit_log_density(s_prior, lam2, y), axis=-1)
    else:
        y = rx.exp_concrete_sample(post_logits, lam1, rng)
        z = ad.exp(y)
        post_term = ad.asum(rx.exp_concrete_log_density(post_logits, lam1, y), axis=-1)
        prior_term = ad.asum(rx.exp_concrete_log_density(prior_logits, lam2, y), axis=-1)

    log_lik = decoder(z)

    if cfg.relaxation_mode == "relaxed_kl":
        log_w = log_lik + prior_term - post_term
    elif cfg.relaxation_mode == "relaxed_log_mass":
        log_p = prior_logits - ad.logsumexp(prior_logits, axis=-1, keepdims=True)
        log_q = post_logits - ad.logsumexp(post_logits, axis=-1, keepdims=True)
        diff = log_p - log_q
        if n == 2:
            # two-state simplex weights recovered from the sigmoid sample
            per_group = z * (diff[..., 1] - diff[..., 0]) + diff[..., 0]
        else:
            per_group = ad.asum(z * diff, axis=-1)
        log_w = log_lik + ad.asum(per_group, axis=-1)
    else:  # analytic_kl: exact discrete KL, outside the per-sample weights
        log_w = log_lik

    log_w = _clamp_log_weights(log_w, diagnostics)
    per_point = ad.logsumexp(ad.reshape(log_w, (m, batch)), axis=0) - np.log(m)
    bound = ad.amean(per_point)

    if cfg.relaxation_mode == "analytic_kl":
        log_p = prior_logits - ad.logsumexp(prior_logits, axis=-1, keepdims=True)
        log_q = post_logits - ad.logsumexp(post_logits, axis=-1, keepdims=True)
        q = ad.exp(log_q)
        kl = ad.asum(q * (log_p - log_q), axis=-1)  # (mB, G)
        kl_per_point = ad.amean(ad.asum(kl, axis=-1))
        bound = bound + kl_per_point

    if diagnostics is not None:
        diagnostics["per_sample_log_weights"] = rx._values(log_w).reshape(m, batch)
    return bound
