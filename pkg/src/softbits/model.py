"""Networks of n-ary stochastic layers.

An architecture string like ``(392V-240H~784V)`` is read left to right as
the order of conditional sampling: integers are unit counts, V marks an
observed layer, H a latent one, and the separator gives the conditioning
function to the next layer (``-`` linear, ``~`` two tanh layers sized like
the source layer followed by an affine map).

A latent layer of U units with arity n is U/log2(n) independent n-state
nodes; each node's sampled state is embedded onto a corner of the hypercube
{-1,+1}^log2(n), so layer activity is a vector of U values in [-1, 1].
Every latent node is parameterized by n logits.

The same parameters drive two graphs. In ``relaxed`` mode the stochastic
nodes are the log-space relaxations (pre-sigmoid logit nodes for arity 2,
log-simplex nodes otherwise) and all mass terms are the matching
log-densities; in ``discrete`` mode states are sampled by perturbed argmax
and the exact log-masses are used. Passing autodiff nodes as ``tensors``
makes either graph differentiable in the parameters (sampling itself is
never differentiated; discrete draws always detach).
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from softbits import autodiff as ad
from softbits import relaxations as rx
from softbits.noise import RngStream

CENTERING_RATE = 0.9
BASE_RATE_LOGIT_CLAMP = 5.0
CHECKPOINT_VERSION = 1

_TOKEN = re.compile(r"(\d+)([VH])([-~])?")


@dataclass(frozen=True)
class LayerSpec:
    role: str                    # "observed" | "latent"
    units: int
    link_to_next: str | None     # "linear" | "nonlinear" | None on the last layer


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    arity: int = 2

    def __post_init__(self):
        if not any(l.role == "observed" for l in self.layers):
            raise ValueError("model needs at least one observed layer")
        bits = self.arity.bit_length() - 1
        if self.arity < 2 or (1 << bits) != self.arity:
            raise ValueError(f"arity must be a power of two >= 2, got {self.arity}")
        for l in self.layers:
            if l.role == "latent" and l.units % bits != 0:
                raise ValueError(
                    f"latent layer of {l.units} units not divisible by log2({self.arity})")

    def groups(self, i: int) -> int:
        return self.layers[i].units // (self.arity.bit_length() - 1)

    @property
    def latent_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.role == "latent"]


def parse_model_spec(text: str, arity: int = 2) -> NetworkSpec:
    """Parse an architecture string; inverse of :func:`format_model_spec`."""
    s = text.strip().replace("–", "-").replace("∼", "~")
    if not (s.startswith("(") and s.endswith(")")):
        raise ValueError(f"model spec must be parenthesized: {text!r}")
    body = s[1:-1]
    if not body:
        raise ValueError("empty model spec")
    layers: list[LayerSpec] = []
    pos = 0
    pending_sep: str | None = None
    while pos < len(body):
        m = _TOKEN.match(body, pos)
        if m is None:
            raise ValueError(f"cannot parse model spec at {body[pos:]!r}")
        units = int(m.group(1))
        if units == 0:
            raise ValueError("layer with zero units")
        role = "observed" if m.group(2) == "V" else "latent"
        layers.append(LayerSpec(role, units, None))
        if len(layers) >= 2:
            # patch the previous layer's link now that a successor exists
            prev = layers[-2]
            layers[-2] = LayerSpec(prev.role, prev.units,
                                   "linear" if pending_sep == "-" else "nonlinear")
        pending_sep = m.group(3)
        pos = m.end()
    if pending_sep is not None:
        raise ValueError(f"dangling separator at the end of {text!r}")
    return NetworkSpec(tuple(layers), arity)


def format_model_spec(spec: NetworkSpec) -> str:
    parts = []
    for l in spec.layers:
        parts.append(f"{l.units}{'V' if l.role == 'observed' else 'H'}")
        if l.link_to_next is not None:
            parts.append("-" if l.link_to_next == "linear" else "~")
    return "(" + "".join(parts) + ")"


def validate_for_task(spec: NetworkSpec, task: str):
    roles = [l.role for l in spec.layers]
    if task == "density":
        if roles[-1] != "observed" or any(r != "latent" for r in roles[:-1]):
            raise ValueError(f"density task needs (H...H V), got {format_model_spec(spec)}")
    elif task == "structured":
        if len(roles) < 3 or roles[0] != "observed" or roles[-1] != "observed" \
                or any(r != "latent" for r in roles[1:-1]):
            raise ValueError(f"structured task needs (V H...H V), got {format_model_spec(spec)}")
    else:
        raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# parameters

@dataclass
class ParameterStore:
    """Keyed weight/bias tensors plus per-layer centering means.

    The centering means are running statistics, never gradient-carrying;
    both the relaxed and the discrete graph read the same tensors.
    """

    tensors: dict[str, np.ndarray]
    centering: dict[str, np.ndarray]
    spec_string: str
    arity: int

    def save(self, path: str):
        payload = {"__version__": np.array(CHECKPOINT_VERSION),
                   "__spec__": np.array(self.spec_string),
                   "__arity__": np.array(self.arity)}
        payload.update({f"t::{k}": v for k, v in self.tensors.items()})
        payload.update({f"c::{k}": v for k, v in self.centering.items()})
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "ParameterStore":
        with np.load(path, allow_pickle=False) as z:
            version = int(z["__version__"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            tensors = {k[3:]: z[k].copy() for k in z.files if k.startswith("t::")}
            centering = {k[3:]: z[k].copy() for k in z.files if k.startswith("c::")}
            return cls(tensors, centering, str(z["__spec__"]), int(z["__arity__"]))


def _link_keys(prefix: str, kind: str, in_dim: int, out_dim: int):
    if kind == "linear":
        return [(f"{prefix}.W", (in_dim, out_dim)), (f"{prefix}.b", (out_dim,))]
    return [(f"{prefix}.W1", (in_dim, in_dim)), (f"{prefix}.b1", (in_dim,)),
            (f"{prefix}.W2", (in_dim, in_dim)), (f"{prefix}.b2", (in_dim,)),
            (f"{prefix}.W3", (in_dim, out_dim)), (f"{prefix}.b3", (out_dim,))]


def _layer_links(spec: NetworkSpec, task: str):
    """All conditioning links as (key prefix, kind, in_dim, out_dim, target)."""
    n = spec.arity
    links = []
    for j in range(len(spec.layers) - 1):
        src, dst = spec.layers[j], spec.layers[j + 1]
        out = dst.units if dst.role == "observed" else spec.groups(j + 1) * n
        links.append((f"gen{j}", src.link_to_next, src.units, out, j + 1))
    if task == "density":
        for j in spec.latent_indices:
            src = spec.layers[j + 1]
            links.append((f"inf{j}", spec.layers[j].link_to_next, src.units,
                          spec.groups(j) * n, j))
    return links


def base_rate_logits(rates: np.ndarray) -> np.ndarray:
    """Logit of per-pixel base rates, clamped to +-5 (rates of exactly 0 or 1
    have no finite logit)."""
    r = np.clip(np.asarray(rates, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    return np.clip(np.log(r) - np.log1p(-r), -BASE_RATE_LOGIT_CLAMP, BASE_RATE_LOGIT_CLAMP)


def init_params(spec: NetworkSpec, rng: RngStream, base_rates: np.ndarray | None = None,
                task: str = "density") -> ParameterStore:
    """Glorot-uniform weights, zero biases; the bias producing the final
    observed layer's logits starts at the clamped base-rate logits."""
    validate_for_task(spec, task)
    tensors: dict[str, np.ndarray] = {}

    if task == "density" and len(spec.layers) == 1:
        if base_rates is None:
            raise ValueError("single observed layer needs dataset base rates")
        tensors["obs_logits"] = base_rate_logits(base_rates)
        return ParameterStore(tensors, {}, format_model_spec(spec), spec.arity)

    shapes: list[tuple[str, tuple]] = []
    for prefix, kind, in_dim, out_dim, _ in _layer_links(spec, task):
        shapes.extend(_link_keys(prefix, kind, in_dim, out_dim))
    if task == "density":
        shapes.append(("prior", (spec.groups(0), spec.arity)))

    for key, shape in sorted(shapes):
        if ".W" in key:
            fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[key] = (rng.uniform(shape) * 2.0 - 1.0) * limit
        else:
            tensors[key] = np.zeros(shape)

    if base_rates is not None:
        final_prefix = f"gen{len(spec.layers) - 2}"
        bias_key = f"{final_prefix}.b" if f"{final_prefix}.b" in tensors else f"{final_prefix}.b3"
        tensors[bias_key] = base_rate_logits(base_rates)
    elif spec.layers[-1].role == "observed":
        raise ValueError("observed decoder layer needs dataset base rates")

    centering = {f"center{j}": np.zeros(spec.layers[j].units) for j in spec.latent_indices}
    return ParameterStore(tensors, centering, format_model_spec(spec), spec.arity)


def apply_link(tensors, prefix: str, kind: str, x):
    """Conditioning function: activity (B, in) -> logits (B, out)."""
    if kind == "linear":
        return ad.matmul(x, tensors[f"{prefix}.W"]) + tensors[f"{prefix}.b"]
    h1 = ad.tanh(ad.matmul(x, tensors[f"{prefix}.W1"]) + tensors[f"{prefix}.b1"])
    h2 = ad.tanh(ad.matmul(h1, tensors[f"{prefix}.W2"]) + tensors[f"{prefix}.b2"])
    return ad.matmul(h2, tensors[f"{prefix}.W3"]) + tensors[f"{prefix}.b3"]


def centering_update(store: ParameterStore, layer_key: str, batch_activity: np.ndarray):
    """Fold a batch mean into the layer's running activity mean (EMA)."""
    mean = store.centering[layer_key]
    batch_mean = np.mean(np.asarray(batch_activity, dtype=np.float64), axis=0)
    store.centering[layer_key] = CENTERING_RATE * mean + (1.0 - CENTERING_RATE) * batch_mean


# ---------------------------------------------------------------------------
# forward sampling

@dataclass
class LayerSample:
    layer_index: int
    logits: object               # (B, G, n) node or array
    node: object | None          # relaxed stochastic node: (B, G) logit-space
    #                              for arity 2, (B, G, n) log-simplex otherwise
    indices: np.ndarray | None   # (B, G) sampled states in discrete mode
    activity: object             # (B, units) hypercube coordinates


def _sample_layer(spec: NetworkSpec, logits, mode: str, lam: float,
                  rng: RngStream, layer_index: int) -> LayerSample:
    n = spec.arity
    if mode == "discrete":
        idx = rx.discrete_sample_indices(rx._values(logits), rng)
        if n == 2:
            activity = 2.0 * idx.astype(np.float64) - 1.0
        else:
            C = rx.corner_matrix(n)
            activity = C[:, idx].transpose(1, 2, 0).reshape(idx.shape[0], -1)
        return LayerSample(layer_index, logits, None, idx, activity)
    if mode != "relaxed":
        raise ValueError(f"unknown mode {mode!r}")
    if n == 2:
        s = logits[..., 1] - logits[..., 0]
        y = rx.binary_logit_sample(s, lam, rng)
        activity = 2.0 * ad.sigmoid(y) - 1.0
        return LayerSample(layer_index, logits, y, None, activity)
    y = rx.exp_concrete_sample(logits, lam, rng)
    z = ad.exp(y)
    emb = rx.hypercube_embed(z, n)
    lead = rx._values(emb).shape
    activity = ad.reshape(emb, (lead[0], lead[1] * lead[2]))
    return LayerSample(layer_index, logits, y, None, activity)


def _layer_log_prob(spec: NetworkSpec, logits, sample: LayerSample,
                    mode: str, lam: float):
    """Per-datapoint log mass/density of `sample` under `logits`, summed
    over the layer's groups."""
    if mode == "discrete":
        if spec.arity == 2:
            s = logits[..., 1] - logits[..., 0]
            return ad.asum(rx.bernoulli_log_mass(s, sample.indices.astype(np.float64)),
                           axis=-1)
        return ad.asum(rx.discrete_log_mass(logits, sample.indices), axis=-1)
    if spec.arity == 2:
        s = logits[..., 1] - logits[..., 0]
        return ad.asum(rx.binary_logit_log_density(s, lam, sample.node), axis=-1)
    return ad.asum(rx.exp_concrete_log_density(logits, lam, sample.node), axis=-1)


def _reshape_logits(spec: NetworkSpec, flat, j: int):
    b = rx._values(flat).shape[0]
    return ad.reshape(flat, (b, spec.groups(j), spec.arity))


def _centered(store: ParameterStore, j: int, activity):
    return activity - store.centering[f"center{j}"]


def forward(spec: NetworkSpec, store: ParameterStore, tensors, x: np.ndarray,
            mode: str, lam: float, rng: RngStream, task: str = "density",
            training: bool = False):
    """Run the sampling chain; returns ``(samples, final_input)`` with one
    :class:`LayerSample` per latent layer (ordered as in the architecture
    string) and the centered activity that feeds whatever follows the chain.

    For the density task this is the inference chain: the observed data
    conditions the nearest latent layer and sampling proceeds toward the
    deepest one. For the structured task it is the generative chain from the
    context. Latent activities are centered (minus the gradient-blocked
    running mean) before feeding the next conditioning function; when
    ``training`` each running mean is updated only after it has been used.
    """
    validate_for_task(spec, task)
    samples: dict[int, LayerSample] = {}

    if task == "density":
        order = list(reversed(spec.latent_indices))
    else:
        order = spec.latent_indices
    current = np.asarray(x, dtype=np.float64)
    for j in order:
        if task == "density":
            prefix, kind = f"inf{j}", spec.layers[j].link_to_next
        else:
            prefix, kind = f"gen{j - 1}", spec.layers[j - 1].link_to_next
        logits = _reshape_logits(spec, apply_link(tensors, prefix, kind, current), j)
        samp = _sample_layer(spec, logits, mode, lam, rng, j)
        samples[j] = samp
        current = _centered(store, j, samp.activity)
        if training:
            centering_update(store, f"center{j}", rx._values(samp.activity))

    return [samples[j] for j in spec.latent_indices], current


@dataclass
class GraphOutput:
    log_w: object                    # (B,) per-sample log weights (node or array)
    outside: object                  # (B,) additive term outside the weights (0 unless
    #                                  the analytic-KL variant is selected)
    log_q: object | None             # (B,) total inference log mass/density
    layers: list[LayerSample] = field(default_factory=list)


def log_weights(spec: NetworkSpec, store: ParameterStore, tensors, batch,
                task: str, mode: str, lam_post: float, lam_prior: float,
                rng: RngStream, training: bool = False,
                relaxation_mode: str = "relaxed_kl") -> GraphOutput:
    """Build per-datapoint log weights for the variational bound.

    ``batch`` is the (B, D) observation for the density task or the
    ``(context, target)`` pair for the structured one. In discrete mode the
    exact masses are used regardless of ``relaxation_mode``.
    """
    if task == "density" and len(spec.layers) == 1:
        ll = ad.asum(rx.bernoulli_log_mass(tensors["obs_logits"], batch), axis=-1)
        return GraphOutput(ll, 0.0, None, [])

    if task == "structured":
        x2, x1 = batch
        layers, final_input = forward(spec, store, tensors, x2, mode, lam_post, rng,
                                      task="structured", training=training)
        j_last = len(spec.layers) - 1
        obs_logits = apply_link(tensors, f"gen{j_last - 1}",
                                spec.layers[j_last - 1].link_to_next, final_input)
        ll = ad.asum(rx.bernoulli_log_mass(obs_logits, x1), axis=-1)
        # chain log mass/density: the sampling distribution's own score,
        # needed by score-function training (it does not enter the bound)
        log_q = ad.add_n([_layer_log_prob(spec, s.logits, s, mode, lam_post)
                          for s in layers])
        return GraphOutput(ll, 0.0, log_q, layers)

    x = batch
    layers, _ = forward(spec, store, tensors, x, mode, lam_post, rng,
                        task="density", training=training)
    by_index = {s.layer_index: s for s in layers}

    # inference-side terms
    q_terms = [_layer_log_prob(spec, s.logits, s, mode, lam_post) for s in layers]
    log_q = ad.add_n(q_terms)

    # generative-side logits for every latent layer: the prior for the
    # deepest, conditionals from the previous layer's activity otherwise
    p_logits = {}
    for j in spec.latent_indices:
        if j == 0:
            b = rx._values(x).shape[0]
            prior = ad.reshape(tensors["prior"], (1, spec.groups(0), spec.arity))
            p_logits[0] = ad.broadcast_to(prior, (b, spec.groups(0), spec.arity))
        else:
            src = by_index[j - 1]
            p_logits[j] = _reshape_logits(
                spec, apply_link(tensors, f"gen{j - 1}",
                                 spec.layers[j - 1].link_to_next, src.activity), j)

    j_obs = len(spec.layers) - 1
    obs_logits = apply_link(tensors, f"gen{j_obs - 1}",
                            spec.layers[j_obs - 1].link_to_next,
                            by_index[j_obs - 1].activity)
    ll = ad.asum(rx.bernoulli_log_mass(obs_logits, x), axis=-1)

    if mode == "discrete" or relaxation_mode == "relaxed_kl":
        p_terms = [_layer_log_prob(spec, p_logits[s.layer_index], s, mode, lam_prior)
                   for s in layers]
        return GraphOutput(ll + ad.add_n(p_terms) - log_q, 0.0, log_q, layers)

    if relaxation_mode == "relaxed_log_mass":
        terms = []
        for s in layers:
            lp = p_logits[s.layer_index] - ad.logsumexp(p_logits[s.layer_index],
                                                        axis=-1, keepdims=True)
            lq = s.logits - ad.logsumexp(s.logits, axis=-1, keepdims=True)
            diff = lp - lq
            if spec.arity == 2:
                zb = ad.sigmoid(s.node)
                per_group = zb * (diff[..., 1] - diff[..., 0]) + diff[..., 0]
            else:
                per_group = ad.asum(ad.exp(s.node) * diff, axis=-1)
            terms.append(ad.asum(per_group, axis=-1))
        return GraphOutput(ll + ad.add_n(terms), 0.0, log_q, layers)

    if relaxation_mode == "analytic_kl":
        kls = []
        for s in layers:
            lp = p_logits[s.layer_index] - ad.logsumexp(p_logits[s.layer_index],
                                                        axis=-1, keepdims=True)
            lq = s.logits - ad.logsumexp(s.logits, axis=-1, keepdims=True)
            q = ad.exp(lq)
            kls.append(ad.asum(ad.asum(q * (lp - lq), axis=-1), axis=-1))
        return GraphOutput(ll, ad.add_n(kls), log_q, layers)

    raise ValueError(f"unknown relaxation mode {relaxation_mode!r}")
