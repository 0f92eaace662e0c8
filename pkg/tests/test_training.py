"""Optimizer arithmetic, training-loop contracts, sweep output."""

import csv
import math
import os

import numpy as np
import pytest

from softbits import data as dt
from softbits import training as tr
from softbits.noise import RngStream


# -- adam ------------------------------------------------------------------------

def test_zero_gradient_leaves_parameters_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    state = tr.AdamState()
    tr.adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_first_step_magnitude_is_learning_rate():
    params = {"w": np.array([0.0])}
    state = tr.AdamState()
    tr.adam_step(params, {"w": np.array([1.0])}, state, lr=0.05)
    assert params["w"][0] == pytest.approx(-0.05, rel=1e-6)


def test_constant_gradient_step_magnitude_converges_to_learning_rate():
    params = {"w": np.array([0.0])}
    state = tr.AdamState()
    prev = 0.0
    for _ in range(500):
        prev = params["w"][0]
        tr.adam_step(params, {"w": np.array([0.7])}, state, lr=0.01)
    assert abs(params["w"][0] - prev) == pytest.approx(0.01, rel=1e-3)


def test_weight_decay_applies_to_weight_matrices_only():
    params = {"enc.W": np.array([[2.0]]), "enc.b": np.array([2.0])}
    state = tr.AdamState()
    zero = {"enc.W": np.zeros((1, 1)), "enc.b": np.zeros(1)}
    tr.adam_step(params, zero, state, lr=0.01, weight_decay=0.1)
    assert params["enc.W"][0, 0] < 2.0     # decayed
    assert params["enc.b"][0] == 2.0       # untouched


def test_non_finite_gradient_aborts():
    params = {"w": np.zeros(1)}
    with pytest.raises(tr.TrainingDiverged, match="non-finite"):
        tr.adam_step(params, {"w": np.array([np.nan])}, tr.AdamState(), lr=0.1)


def test_gradient_key_mismatch_rejected():
    with pytest.raises(ValueError, match="keys"):
        tr.adam_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, tr.AdamState(), lr=0.1)


# -- training loop ------------------------------------------------------------------

def _smoke_config(**overrides):
    base = dict(model="(4H~16V)", arity=2, task="density", m_train=1, m_eval=10,
                steps=50, eval_every=25, batch_size=32, seed=1)
    base.update(overrides)
    return tr.TrainConfig(**base)


def test_smoke_run_writes_metrics_and_checkpoint(tmp_path):
    cfg = _smoke_config(steps=200, eval_every=50, out_dir=str(tmp_path / "run"))
    result = tr.train(cfg)
    assert os.path.exists(result.metrics_path)
    assert os.path.exists(result.checkpoint_path)
    with open(result.metrics_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200 // 50 + 1   # step 0 plus one per interval
    for row in rows:
        for col in ("train_relaxed_nll", "train_discrete_nll", "eval_discrete_nll"):
            assert math.isfinite(float(row[col]))


def test_sfe_runs_with_identical_interfaces(tmp_path):
    cfg = _smoke_config(estimator="sfe", steps=60, eval_every=30,
                        out_dir=str(tmp_path / "sfe"))
    result = tr.train(cfg)
    assert os.path.exists(result.metrics_path)
    assert all(math.isfinite(r.eval_discrete_nll) for r in result.metrics)
    assert all(math.isfinite(r.baseline) for r in result.metrics)


def test_sfe_structured_moves_chain_parameters():
    """Score-function training must reach the chain-conditioning weights,
    which only appear through the sampling distribution's log-mass."""
    cfg = _smoke_config(model="(8V-8H-8V)", task="structured", estimator="sfe",
                        steps=30, eval_every=30, seed=5)
    ds = dt.synth_dataset(seed=5)
    result = tr.train(cfg, dataset=ds)
    import softbits.model as mdl
    from softbits.noise import RngStream, STREAM_INIT

    x2, x1 = result.task.split(ds.train.astype(np.float64))
    fresh = mdl.init_params(result.spec, RngStream(5, STREAM_INIT),
                            base_rates=x1.mean(axis=0), task="structured")
    assert not np.array_equal(result.store.tensors["gen0.W"], fresh.tensors["gen0.W"])


@pytest.mark.parametrize("model,arity", [("(4H~16V)", 4), ("(6H-16V)", 8)])
def test_nary_training_smoke(model, arity):
    cfg = _smoke_config(model=model, arity=arity, steps=30, eval_every=30)
    result = tr.train(cfg)
    assert all(math.isfinite(r.eval_discrete_nll) for r in result.metrics)
    assert result.store.tensors["prior"].shape == (
        {4: 2, 8: 2}[arity], arity)


@pytest.mark.parametrize("mode", ["relaxed_log_mass", "analytic_kl"])
def test_alternate_objective_variants_train(mode):
    cfg = _smoke_config(relaxation_mode=mode, steps=25, eval_every=25)
    result = tr.train(cfg)
    assert all(math.isfinite(r.train_relaxed_nll) for r in result.metrics)


def test_metrics_deterministic_across_runs(tmp_path):
    rows = []
    for tag in ("a", "b"):
        cfg = _smoke_config(steps=75, eval_every=25, out_dir=str(tmp_path / tag))
        result = tr.train(cfg)
        with open(result.metrics_path) as fh:
            rows.append([
                {k: v for k, v in row.items() if k != "wall_time"}
                for row in csv.DictReader(fh)])
    assert rows[0] == rows[1]


def test_evaluation_mutates_nothing():
    cfg = _smoke_config(steps=25, eval_every=25)
    result = tr.train(cfg)
    tensors = {k: v.copy() for k, v in result.store.tensors.items()}
    centering = {k: v.copy() for k, v in result.store.centering.items()}
    tr.evaluate_bound(result.task, result.spec, result.store,
                      result.dataset.valid, 7, RngStream(123, 5))
    for k in tensors:
        np.testing.assert_array_equal(result.store.tensors[k], tensors[k])
    for k in centering:
        np.testing.assert_array_equal(result.store.centering[k], centering[k])


def test_discrete_eval_uses_training_parameter_store():
    cfg = _smoke_config(steps=25, eval_every=25)
    result = tr.train(cfg)
    # same keyed tensors drive both graphs: evaluating after zeroing a tensor
    # must change the discrete bound
    before = tr.evaluate_bound(result.task, result.spec, result.store,
                               result.dataset.valid[:64], 5, RngStream(7, 7))
    result.store.tensors["prior"][:] = 5.0
    after = tr.evaluate_bound(result.task, result.spec, result.store,
                              result.dataset.valid[:64], 5, RngStream(7, 7))
    assert before != after


def test_insane_learning_rate_still_finite(tmp_path):
    """The log-weight clamp and Adam's bounded steps keep the loss finite
    even under a wildly wrong learning rate."""
    cfg = _smoke_config(steps=30, eval_every=30, learning_rate=1e6)
    result = tr.train(cfg)
    assert all(math.isfinite(r.eval_discrete_nll) for r in result.metrics)


def test_nan_objective_aborts_with_checkpoint(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = dt.task_objective

    def poisoned(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 8 and kwargs.get("training"):
            class Fake:
                value = np.array(np.nan)
            return Fake()
        return real(*args, **kwargs)

    monkeypatch.setattr(dt, "task_objective", poisoned)
    cfg = _smoke_config(steps=30, eval_every=10, out_dir=str(tmp_path / "boom"))
    with pytest.raises(tr.TrainingDiverged, match="last good checkpoint"):
        tr.train(cfg)
    assert os.path.exists(str(tmp_path / "boom" / "checkpoint.npz"))


def test_default_temperatures_by_arity():
    assert tr.TrainConfig(arity=2).temperatures() == (2 / 3, 0.5)
    assert tr.TrainConfig(arity=4).temperatures() == (1.0, 2 / 3)
    assert tr.TrainConfig(arity=8).temperatures() == (2 / 3, 0.4)
    assert tr.TrainConfig(arity=2, lambda_post=0.9).temperatures()[0] == 0.9


def test_config_validation():
    with pytest.raises(ValueError, match="positive"):
        tr.TrainConfig(steps=0)
    with pytest.raises(ValueError, match="estimator"):
        tr.TrainConfig(estimator="magic")


# -- sweep -----------------------------------------------------------------------

def test_sweep_rows_and_csv(tmp_path):
    ds = dt.synth_dataset(seed=2)
    cfg = tr.TrainConfig(model="(8V-8H-8V)", task="structured", steps=20,
                         eval_every=20, m_train=1, m_eval=5, seed=2,
                         out_dir=str(tmp_path / "sweep"))
    rows = tr.temperature_sweep(cfg, [0.5], dataset=ds)
    assert len(rows) == 1
    assert rows[0].gap == pytest.approx(rows[0].discrete_nll - rows[0].relaxed_nll)
    with open(str(tmp_path / "sweep" / "sweep.csv")) as fh:
        csv_rows = list(csv.DictReader(fh))
    assert len(csv_rows) == 1
    assert set(csv_rows[0]) == {"lambda", "relaxed_nll", "discrete_nll", "gap"}


def test_single_lambda_sweep_equals_one_training(tmp_path):
    ds = dt.synth_dataset(seed=3)
    cfg = tr.TrainConfig(model="(8V-8H-8V)", task="structured", steps=15,
                         eval_every=15, m_train=1, m_eval=5, seed=3)
    rows = tr.temperature_sweep(cfg, [2 / 3], dataset=ds)
    assert len(rows) == 1 and math.isfinite(rows[0].gap)
