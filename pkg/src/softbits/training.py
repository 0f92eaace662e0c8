"""Adam optimization loop, periodic discrete-graph evaluation, and the
temperature sweep.

Training always runs on one graph and reports both: the relaxed graph (or
the discrete graph under the score-function estimator) receives gradients,
while the discrete graph -- sharing the same parameter store -- is evaluated
periodically on held-out data. Objective columns in the metrics file are
negative bounds in nats per example (lower is better).
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from softbits import autodiff as ad
from softbits import data as dt
from softbits import estimators as est
from softbits import model as mdl
from softbits import relaxations as rx
from softbits.noise import (RngStream, STREAM_EVAL_NOISE, STREAM_INIT,
                            STREAM_SHUFFLE, STREAM_TRAIN_NOISE)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# (posterior lambda1, prior lambda2) defaults per arity
TEMPERATURE_DEFAULTS = {2: (2.0 / 3.0, 0.5), 4: (1.0, 2.0 / 3.0), 8: (2.0 / 3.0, 0.4)}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "(4H~16V)"
    arity: int = 2
    task: str = "density"
    m_train: int = 1
    m_eval: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 64
    steps: int = 5000
    lambda_post: float | None = None
    lambda_prior: float | None = None
    seed: int = 1
    estimator: str = "concrete"          # "concrete" | "sfe"
    relaxation_mode: str = "relaxed_kl"
    data: str = "synth"
    data_dir: str | None = None
    out_dir: str | None = None
    eval_every: int = 250

    def __post_init__(self):
        if min(self.m_train, self.m_eval, self.batch_size, self.steps) < 1:
            raise ValueError("counts must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer settings")
        if self.estimator not in ("concrete", "sfe"):
            raise ValueError(f"unknown estimator {self.estimator!r}")

    def temperatures(self) -> tuple[float, float]:
        lam1, lam2 = TEMPERATURE_DEFAULTS.get(self.arity, (2.0 / 3.0, 0.5))
        if self.lambda_post is not None:
            lam1 = self.lambda_post
        if self.lambda_prior is not None:
            lam2 = self.lambda_prior
        return lam1, lam2


@dataclass
class MetricsRow:
    step: int
    train_relaxed_nll: float
    train_discrete_nll: float
    eval_discrete_nll: float
    wall_time: float
    clamp_count: int
    baseline: float

    FIELDS = ("step", "train_relaxed_nll", "train_discrete_nll",
              "eval_discrete_nll", "wall_time", "clamp_count", "baseline")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """One Adam update (bias-corrected moments), mutating ``params``.

    Weight decay enters as an L2 gradient term on weight matrices only
    (keys containing '.W'), never on biases or prior logits.
    """
    if set(grads) != set(params):
        raise ValueError("gradient keys do not match parameter keys")
    state.t += 1
    t = state.t
    for key in sorted(params):
        g = np.asarray(grads[key], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {key!r} at t={t}")
        if weight_decay and ".W" in key:
            g = g + weight_decay * params[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        state.m[key] = ADAM_BETA1 * state.m[key] + (1 - ADAM_BETA1) * g
        state.v[key] = ADAM_BETA2 * state.v[key] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[key] / (1 - ADAM_BETA1 ** t)
        v_hat = state.v[key] / (1 - ADAM_BETA2 ** t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def minibatches(xs: np.ndarray, batch_size: int, shuffle: RngStream):
    n = xs.shape[0]
    if n <= batch_size:
        while True:
            yield xs[shuffle.permutation(n)]
    while True:
        perm = shuffle.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield xs[perm[i:i + batch_size]]


def evaluate_bound(task: dt.TaskInstance, spec: mdl.NetworkSpec, store: mdl.ParameterStore,
                   xs: np.ndarray, m: int, rng: RngStream, mode: str = "discrete",
                   lam_post: float = 2 / 3, lam_prior: float = 0.5,
                   chunk: int = 8192) -> float:
    """Mean per-example m-sample bound over ``xs``; never mutates the store."""
    cfg = est.ObjectiveConfig(m=m, posterior_temperature=lam_post,
                              prior_temperature=lam_prior)
    rows_per_chunk = max(1, chunk // m)
    total, count = 0.0, 0
    for i in range(0, xs.shape[0], rows_per_chunk):
        part = xs[i:i + rows_per_chunk].astype(np.float64)
        val = dt.task_objective(task, spec, store, store.tensors, part, cfg,
                                rng.child(i), mode=mode, training=False)
        total += float(np.asarray(val)) * part.shape[0]
        count += part.shape[0]
    return total / count


@dataclass
class TrainResult:
    store: mdl.ParameterStore
    metrics: list[MetricsRow]
    dataset: dt.Dataset
    spec: mdl.NetworkSpec
    task: dt.TaskInstance
    step0_test_nll: float
    final_test_nll: float
    final_test_relaxed_nll: float
    metrics_path: str | None = None
    checkpoint_path: str | None = None


def _sfe_step(task, spec, store, tensors_template, batch, cfg, rng, baseline, diag):
    """Score-function step on the discrete graph: per-sample surrogate
    sg(log w - b) * log q + (log-lik + prior terms); returns (objective,
    grads)."""
    m, b = cfg.m, batch.shape[0]
    tiled = np.repeat(batch[None, ...], m, axis=0).reshape(m * b, -1)
    model_batch = task.split(tiled) if task.kind == "structured" else tiled
    tape = ad.Tape()
    nodes = {k: tape.leaf(v) for k, v in tensors_template.items()}
    out = mdl.log_weights(spec, store, nodes, model_batch, task.kind, "discrete",
                          cfg.posterior_temperature, cfg.prior_temperature, rng,
                          training=True)
    log_w = est._clamp_log_weights(out.log_w, diag)
    value = float(np.mean(rx._values(log_w)))
    if out.log_q is None:
        surrogate = ad.amean(log_w)
    else:
        coeff = rx._values(log_w) - baseline.value
        # terms carrying direct parameter dependence: for the density task the
        # weights fold in -log q, which must not receive the score coefficient
        rest = log_w + out.log_q if task.kind == "density" else log_w
        surrogate = ad.amean(out.log_q * coeff + rest)
    ad.backward(surrogate)
    grads = {k: ad.grad_or_zero(n) for k, n in nodes.items()}
    baseline.update(value)
    return value, grads


def train(cfg: TrainConfig, dataset: dt.Dataset | None = None) -> TrainResult:
    """Run the training loop and return the final parameters plus metrics.

    The relaxed objective (or its score-function surrogate) is optimized at
    fixed temperatures throughout; every ``eval_every`` steps the discrete
    graph is evaluated with ``m_eval`` samples on the validation split using
    the same parameter store. Non-finite losses abort with the last
    checkpoint saved.
    """
    ds = dataset if dataset is not None else dt.load_dataset(cfg.data, cfg.data_dir,
                                                             seed=cfg.seed)
    task = dt.TaskInstance(cfg.task, ds.dims)
    spec = mdl.parse_model_spec(cfg.model, cfg.arity)
    mdl.validate_for_task(spec, cfg.task)
    lam1, lam2 = cfg.temperatures()

    if cfg.task == "structured":
        base_rates = task.split(ds.train.astype(np.float64))[1].mean(axis=0)
    else:
        base_rates = ds.base_rates
    store = mdl.init_params(spec, RngStream(cfg.seed, STREAM_INIT), base_rates, cfg.task)

    obj_cfg = est.ObjectiveConfig(m=cfg.m_train, relaxation_mode=cfg.relaxation_mode,
                                  posterior_temperature=lam1, prior_temperature=lam2)
    shuffle = RngStream(cfg.seed, STREAM_SHUFFLE)
    train_noise = RngStream(cfg.seed, STREAM_TRAIN_NOISE)
    eval_root = RngStream(cfg.seed, STREAM_EVAL_NOISE)
    batches = minibatches(ds.train, cfg.batch_size, shuffle)
    probe = ds.train[:cfg.batch_size].astype(np.float64)

    adam = AdamState()
    baseline = est.BaselineState()
    metrics: list[MetricsRow] = []
    start = time.perf_counter()
    clamps_since_row = 0
    eval_index = 0
    best_valid = -math.inf
    best_tensors = None
    last_good = {k: v.copy() for k, v in store.tensors.items()}

    def snapshot():
        return ({k: v.copy() for k, v in store.tensors.items()},
                {k: v.copy() for k, v in store.centering.items()})

    def eval_row(step: int):
        nonlocal eval_index, clamps_since_row, best_valid, best_tensors
        erng = eval_root.child(eval_index)
        eval_index += 1
        tr = dt.task_objective(task, spec, store, store.tensors, probe, obj_cfg,
                               erng.child(1), mode="relaxed")
        td = dt.task_objective(task, spec, store, store.tensors, probe, obj_cfg,
                               erng.child(2), mode="discrete")
        ev = evaluate_bound(task, spec, store, ds.valid, cfg.m_eval, erng.child(3),
                            mode="discrete", lam_post=lam1, lam_prior=lam2)
        metrics.append(MetricsRow(step, -float(np.asarray(tr)), -float(np.asarray(td)),
                                  -ev, time.perf_counter() - start,
                                  clamps_since_row,
                                  baseline.value if cfg.estimator == "sfe" else math.nan))
        clamps_since_row = 0
        if cfg.estimator == "sfe" and ev > best_valid:
            best_valid = ev
            best_tensors = snapshot()

    def test_eval(mode: str) -> float:
        return -evaluate_bound(task, spec, store, ds.test, cfg.m_eval,
                               eval_root.child(10_000_000), mode=mode,
                               lam_post=lam1, lam_prior=lam2)

    step0_test_nll = test_eval("discrete")
    eval_row(0)

    for step in range(1, cfg.steps + 1):
        batch = next(batches).astype(np.float64)
        diag: dict = {}
        if cfg.estimator == "concrete":
            tape = ad.Tape()
            nodes = {k: tape.leaf(v) for k, v in store.tensors.items()}
            bound = dt.task_objective(task, spec, store, nodes, batch, obj_cfg,
                                      train_noise, mode="relaxed", training=True,
                                      diagnostics=diag)
            value = float(bound.value)
            if not math.isfinite(value):
                _abort_with_checkpoint(cfg, store, last_good, step)
            ad.backward(-bound)
            grads = {k: ad.grad_or_zero(n) for k, n in nodes.items()}
        else:
            value, grads = _sfe_step(task, spec, store, store.tensors, batch,
                                     obj_cfg, train_noise, baseline, diag)
            if not math.isfinite(value):
                _abort_with_checkpoint(cfg, store, last_good, step)
        clamps_since_row += diag.get("clamp_count", 0)
        # gradients of -bound: concrete path already negated; sfe maximizes
        if cfg.estimator == "sfe":
            grads = {k: -g for k, g in grads.items()}
        adam_step(store.tensors, grads, adam, cfg.learning_rate, cfg.weight_decay)

        if step % cfg.eval_every == 0 or step == cfg.steps:
            eval_row(step)
            last_good = {k: v.copy() for k, v in store.tensors.items()}

    if cfg.estimator == "sfe" and best_tensors is not None:
        tensors, centering = best_tensors
        store.tensors.update(tensors)
        store.centering.update(centering)

    final_test_nll = test_eval("discrete")
    final_test_relaxed = test_eval("relaxed")

    metrics_path = checkpoint_path = None
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
        write_metrics(metrics_path, metrics)
        checkpoint_path = os.path.join(cfg.out_dir, "checkpoint.npz")
        store.save(checkpoint_path)

    return TrainResult(store, metrics, ds, spec, task, step0_test_nll,
                       final_test_nll, final_test_relaxed,
                       metrics_path, checkpoint_path)


def _abort_with_checkpoint(cfg: TrainConfig, store: mdl.ParameterStore,
                           last_good: dict, step: int):
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        rescued = mdl.ParameterStore(last_good, store.centering,
                                     store.spec_string, store.arity)
        rescued.save(os.path.join(cfg.out_dir, "checkpoint.npz"))
    raise TrainingDiverged(f"non-finite objective at step {step}; "
                           f"last good checkpoint preserved")


def write_metrics(path: str, rows: list[MetricsRow]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsRow.FIELDS)
        for r in rows:
            writer.writerow([r.step, f"{r.train_relaxed_nll:.6f}",
                             f"{r.train_discrete_nll:.6f}", f"{r.eval_discrete_nll:.6f}",
                             f"{r.wall_time:.3f}", r.clamp_count, f"{r.baseline:.6f}"])


@dataclass
class SweepRow:
    lam: float
    relaxed_nll: float
    discrete_nll: float

    @property
    def gap(self) -> float:
        return self.discrete_nll - self.relaxed_nll


SWEEP_EVAL_REPEATS = 100


def _expected_objective(res: TrainResult, mode: str, m: int, lam: float) -> float:
    """Expected m-sample test objective (the quantity training optimizes),
    averaged over independent noise draws."""
    root = RngStream(res.task.dims * 1000 + 17,
                     STREAM_EVAL_NOISE).child({"relaxed": 1, "discrete": 2}[mode])
    vals = [evaluate_bound(res.task, res.spec, res.store, res.dataset.test, m,
                           root.child(r), mode=mode, lam_post=lam, lam_prior=lam)
            for r in range(SWEEP_EVAL_REPEATS)]
    return -float(np.mean(vals))


def temperature_sweep(cfg: TrainConfig, lambdas: list[float],
                      dataset: dt.Dataset | None = None) -> list[SweepRow]:
    """Train one model per temperature (used for the whole graph) and record
    the final relaxed and discrete test objectives and their gap.

    Both objectives are the expected m_train-sample bound on the test set,
    the same functional the relaxed graph was trained on, so the gap
    isolates the cost of discretization."""
    rows = []
    for lam in lambdas:
        sub = replace(cfg, lambda_post=lam, lambda_prior=lam,
                      out_dir=os.path.join(cfg.out_dir, f"lam{lam:g}") if cfg.out_dir else None)
        res = train(sub, dataset=dataset)
        rows.append(SweepRow(lam,
                             _expected_objective(res, "relaxed", cfg.m_train, lam),
                             _expected_objective(res, "discrete", cfg.m_train, lam)))
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, "sweep.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "relaxed_nll", "discrete_nll", "gap"])
            for r in rows:
                writer.writerow([f"{r.lam:g}", f"{r.relaxed_nll:.6f}",
                                 f"{r.discrete_nll:.6f}", f"{r.gap:.6f}"])
    return rows
