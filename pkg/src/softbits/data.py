"""Dataset ingestion, fixed binarization, and the two task definitions.

Datasets are binary matrices with train/valid/test splits; per-pixel base
rates come from the training split only. The default desk-scale dataset is
synthetic: noisy copies of a few random prototypes, chosen because its exact
log-likelihood has a closed form, which the oracle suite uses as ground
truth.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from softbits import autodiff as ad
from softbits import estimators as est
from softbits import model as mdl
from softbits import relaxations as rx
from softbits.autodiff import np_logsumexp
from softbits.noise import RngStream, STREAM_BINARIZE, STREAM_SYNTH

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class SynthSpec:
    """Generator behind the synthetic dataset: pick a prototype uniformly,
    flip each bit independently. Exact likelihoods are a small mixture sum."""

    prototypes: np.ndarray          # (K, D) in {0,1}
    flip_prob: float

    def log_likelihood(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k, d = self.prototypes.shape
        dist = np.abs(x[:, None, :] - self.prototypes[None, :, :]).sum(axis=2)
        per_proto = dist * np.log(self.flip_prob) + (d - dist) * np.log1p(-self.flip_prob) \
            if self.flip_prob > 0 else np.where(dist == 0, 0.0, -np.inf)
        return np_logsumexp(per_proto - np.log(k), axis=-1)


@dataclass
class Dataset:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    base_rates: np.ndarray
    name: str
    generator: SynthSpec | None = None

    def __post_init__(self):
        for split in (self.train, self.valid, self.test):
            vals = np.unique(split)
            if not np.all(np.isin(vals, (0, 1))):
                raise ValueError("dataset values must be exactly {0, 1}")

    @property
    def dims(self) -> int:
        return self.train.shape[1]


@dataclass(frozen=True)
class TaskInstance:
    kind: str            # "density" | "structured"
    dims: int

    def __post_init__(self):
        if self.kind not in ("density", "structured"):
            raise ValueError(f"unknown task {self.kind!r}")
        if self.kind == "structured" and self.dims % 2:
            raise ValueError("structured task needs an even number of dims")

    @property
    def context_dims(self) -> int:
        return self.dims // 2 if self.kind == "structured" else 0

    @property
    def target_dims(self) -> int:
        return self.dims // 2 if self.kind == "structured" else self.dims

    def split(self, x: np.ndarray):
        """Structured split: context = top half of the image (first dims/2 in
        row-major order), target = bottom half."""
        h = self.dims // 2
        return x[:, :h], x[:, h:]


# ---------------------------------------------------------------------------
# IDX files

def load_idx(path: str) -> np.ndarray:
    """Parse a big-endian IDX file (gzip transparently) into a uint8 tensor."""
    opener = gzip.open if _is_gzip(path) else open
    with opener(path, "rb") as fh:
        header = fh.read(4)
        if len(header) < 4:
            raise IdxFormatError(f"{path}: truncated magic at offset 0")
        (magic,) = struct.unpack(">I", header)
        if magic == IDX_MAGIC_IMAGES:
            ndim = 3
        elif magic == IDX_MAGIC_LABELS:
            ndim = 1
        else:
            raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at offset 0 "
                                 f"(expected 0x{IDX_MAGIC_IMAGES:08x} images or "
                                 f"0x{IDX_MAGIC_LABELS:08x} labels)")
        raw_dims = fh.read(4 * ndim)
        if len(raw_dims) < 4 * ndim:
            raise IdxFormatError(f"{path}: truncated dimension header at offset 4")
        dims = struct.unpack(f">{ndim}I", raw_dims)
        count = int(np.prod(dims))
        body = fh.read(count)
        if len(body) < count:
            raise IdxFormatError(f"{path}: expected {count} data bytes at offset "
                                 f"{4 + 4 * ndim}, found {len(body)}")
        return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def _is_gzip(path: str) -> bool:
    with open(path, "rb") as fh:
        return fh.read(2) == b"\x1f\x8b"


def binarize_fixed(raw: np.ndarray, seed: int, cache_path: str | None = None) -> np.ndarray:
    """One fixed binarization: pixel = 1 with probability equal to its
    intensity, drawn once from a dedicated stream. Cached to an .npy file
    (byte-identical across runs) when a path is given."""
    if cache_path is not None and os.path.exists(cache_path):
        return np.load(cache_path)
    raw = np.asarray(raw)
    intensity = raw.astype(np.float64) / 255.0 if raw.dtype == np.uint8 else raw.astype(np.float64)
    if intensity.min() < 0.0 or intensity.max() > 1.0:
        raise ValueError("intensities must lie in [0, 1] after scaling")
    stream = RngStream(seed, STREAM_BINARIZE)
    bits = (stream.uniform(intensity.shape) < intensity).astype(np.uint8)
    if cache_path is not None:
        tmp = f"{cache_path}.tmp.{os.getpid()}.npy"
        np.save(tmp, bits)
        os.replace(tmp, cache_path)
    return bits


def synth_dataset(k_prototypes: int = 4, dims: int = 16, flip_prob: float = 0.05,
                  sizes: tuple[int, int, int] = (2000, 500, 500),
                  seed: int = 0) -> Dataset:
    """Desk-scale stand-in dataset with a closed-form generator likelihood."""
    if k_prototypes < 1:
        raise ValueError("need at least one prototype")
    if not 0.0 <= flip_prob < 0.5:
        raise ValueError("flip probability must lie in [0, 0.5)")
    stream = RngStream(seed, STREAM_SYNTH)
    prototypes = (stream.uniform((k_prototypes, dims)) < 0.5).astype(np.uint8)

    def draw(n):
        which = np.minimum((stream.uniform((n,)) * k_prototypes).astype(np.int64),
                           k_prototypes - 1)
        flips = stream.uniform((n, dims)) < flip_prob
        return np.bitwise_xor(prototypes[which], flips.astype(np.uint8))

    train, valid, test = (draw(n) for n in sizes)
    return Dataset(train, valid, test, train.mean(axis=0), "synth",
                   SynthSpec(prototypes, flip_prob))


def load_dataset(name: str, data_dir: str | None = None, seed: int = 0,
                 **synth_opts) -> Dataset:
    if name == "synth":
        return synth_dataset(seed=seed, **synth_opts)
    if name not in ("mnist", "omniglot"):
        raise ValueError(f"unknown dataset {name!r}")
    if data_dir is None:
        raise ValueError(f"--data {name} needs --data-dir")

    amat = {s: os.path.join(data_dir, f"binarized_mnist_{s}.amat")
            for s in ("train", "valid", "test")}
    if name == "mnist" and all(os.path.exists(p) for p in amat.values()):
        # pre-binarized files, used verbatim
        parts = {s: np.loadtxt(p, dtype=np.uint8) for s, p in amat.items()}
        return Dataset(parts["train"], parts["valid"], parts["test"],
                       parts["train"].mean(axis=0), name)

    train_raw = _find_idx(data_dir, "train-images-idx3-ubyte")
    test_raw = _find_idx(data_dir, "t10k-images-idx3-ubyte")
    cache = lambda stem: os.path.join(data_dir, f"{stem}.bin.seed{seed}.npy")
    train_bits = binarize_fixed(load_idx(train_raw), seed, cache("train"))
    test_bits = binarize_fixed(load_idx(test_raw), seed + 1, cache("test"))
    train_bits = train_bits.reshape(train_bits.shape[0], -1)
    test_bits = test_bits.reshape(test_bits.shape[0], -1)
    n_valid = max(1, train_bits.shape[0] // 6) if name == "mnist" else \
        max(1, train_bits.shape[0] // 10)
    if name == "mnist" and train_bits.shape[0] == 60000:
        n_valid = 10000
    train, valid = train_bits[:-n_valid], train_bits[-n_valid:]
    return Dataset(train, valid, test_bits, train.mean(axis=0), name)


def _find_idx(data_dir: str, stem: str) -> str:
    for cand in (stem, stem + ".gz"):
        path = os.path.join(data_dir, cand)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"no {stem}[.gz] under {data_dir}")


# ---------------------------------------------------------------------------
# objectives

def task_objective(task: TaskInstance, spec: mdl.NetworkSpec, store: mdl.ParameterStore,
                   tensors, batch: np.ndarray, cfg: est.ObjectiveConfig,
                   rng: RngStream, mode: str = "relaxed", training: bool = False,
                   diagnostics: dict | None = None):
    """The m-sample variational bound for one minibatch, as a scalar node
    (or float when ``tensors`` are plain arrays). Higher is better; callers
    minimizing should negate."""
    if task.kind == "structured":
        ok = (spec.layers[0].units == task.context_dims
              and spec.layers[-1].units == task.target_dims)
    else:
        ok = spec.layers[-1].units == task.dims
    if not ok:
        raise ValueError(f"task dims {task.dims} do not match model "
                         f"{mdl.format_model_spec(spec)}")
    m = cfg.m
    b = batch.shape[0]
    tiled = np.repeat(batch[None, ...], m, axis=0).reshape(m * b, -1)
    model_batch = task.split(tiled) if task.kind == "structured" else tiled
    out = mdl.log_weights(spec, store, tensors, model_batch, task.kind, mode,
                          cfg.posterior_temperature, cfg.prior_temperature, rng,
                          training=training,
                          relaxation_mode=cfg.relaxation_mode)
    log_w = est._clamp_log_weights(out.log_w, diagnostics)
    per_point = ad.logsumexp(ad.reshape(log_w, (m, b)), axis=0) - np.log(m)
    bound = ad.amean(per_point)
    if not isinstance(out.outside, float):
        bound = bound + ad.amean(out.outside)
    if diagnostics is not None:
        diagnostics["per_sample_log_weights"] = rx._values(log_w).reshape(m, b)
    return bound
