"""Desk-scale models and datasets, all float64 numpy.

The model is a fully-connected ReLU classifier with optional batch
normalization on the hidden layers, exposed as an
:class:`~safeopt.core.ObjectiveOracle` over a flat parameter vector whose
layout names every weight/bias/normalization segment. Gradients are
analytic reverse-mode (hand-written backprop), which keeps runs exactly
reproducible and lets finite-difference tests pin correctness tightly.

Batch-norm semantics: training-mode forward/backward always normalizes by
the current batch's moments; the stored running statistics are used only
by evaluation-mode forwards and are *never* silently updated by
value/gradient calls (they change only through :func:`batchnorm_tune`).
That keeps the oracle pure and makes statistic recalibration an explicit,
testable step.

Data side: an IDX-format loader for the standard handwritten-digit files,
a Gaussian-blob generator, label corruption with an exact audit record,
and a seeded infinite batch stream that every method in a comparison can
share.
"""

from __future__ import annotations

import gzip
import struct
import warnings
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .core import (FloatArray, ObjectiveOracle, ParamVector, Segment,
                   single_segment_layout)
from .serialization import PathLike, read_container, write_container

IntArray = np.ndarray

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionRecord:
    """Which labels were flipped, and from what."""

    indices: IntArray
    original_labels: IntArray
    fraction: float
    seed: int

    def to_dict(self) -> dict:
        return {"indices": self.indices.tolist(),
                "original_labels": self.original_labels.tolist(),
                "fraction": self.fraction, "seed": self.seed}


@dataclass(frozen=True)
class Dataset:
    inputs: FloatArray          # n_samples x dim
    labels: IntArray            # n_samples, int class ids
    n_classes: int
    name: str = "dataset"
    split: str = "train"
    corruption: Optional[CorruptionRecord] = None

    def __post_init__(self) -> None:
        X = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("inputs must be 2-D (samples x features)")
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels shape {y.shape} != ({X.shape[0]},)")
        if not np.isfinite(X).all():
            raise ValueError("inputs must be finite")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])


def subset(ds: Dataset, indices: Sequence[int], split: Optional[str] = None) -> Dataset:
    idx = np.asarray(indices, dtype=np.int64)
    return Dataset(inputs=ds.inputs[idx], labels=ds.labels[idx],
                   n_classes=ds.n_classes, name=ds.name,
                   split=split if split is not None else ds.split,
                   corruption=None)


def synth_blobs(n_samples: int, dim: int, n_classes: int = 2,
                separation: float = 3.0, seed: int = 0,
                name: str = "blobs") -> Dataset:
    """Gaussian blobs: class centers scaled by ``separation``, unit noise."""
    if n_samples < 1 or dim < 1 or n_classes < 1:
        raise ValueError("need n_samples >= 1, dim >= 1, n_classes >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim)) * separation
    labels = rng.integers(n_classes, size=n_samples)
    inputs = centers[labels] + rng.standard_normal((n_samples, dim))
    return Dataset(inputs=inputs, labels=labels, n_classes=n_classes, name=name)


def corrupt_labels(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Flip exactly round(fraction * n) labels to uniformly random *other*
    classes; the returned dataset carries a full audit record."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    n = ds.n_samples
    n_corrupt = int(np.floor(fraction * n + 0.5))  # round half up
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=n_corrupt, replace=False))
    original = ds.labels[idx].copy()
    # old + offset mod C with offset in [1, C) is uniform over other classes
    offsets = rng.integers(1, ds.n_classes, size=n_corrupt)
    new_labels = ds.labels.copy()
    new_labels[idx] = (original + offsets) % ds.n_classes
    record = CorruptionRecord(indices=idx, original_labels=original,
                              fraction=fraction, seed=seed)
    return Dataset(inputs=ds.inputs, labels=new_labels, n_classes=ds.n_classes,
                   name=ds.name, split=ds.split, corruption=record)


def batch_stream(ds: Dataset, batch_size: int, seed: int = 0) -> Iterator[tuple]:
    """Infinite stream of (X, y) batches, reshuffled every epoch.

    Deterministic given (dataset, batch_size, seed); partial trailing
    batches are dropped so every batch has the same size. Pass the same
    seed to every method of a comparison so they see identical data order.
    """
    if batch_size < 1 or batch_size > ds.n_samples:
        raise ValueError(f"batch_size {batch_size} outside [1, {ds.n_samples}]")
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(ds.n_samples)
        for start in range(0, ds.n_samples - batch_size + 1, batch_size):
            take = order[start:start + batch_size]
            yield ds.inputs[take], ds.labels[take]


class IdxFormatError(ValueError):
    """An IDX file failed validation; ``field`` names the offending part."""

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


def _open_maybe_gzip(path: PathLike):
    with open(path, "rb") as fh:
        magic2 = fh.read(2)
    if magic2 == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_mnist_idx(images_path: PathLike, labels_path: PathLike,
                   standardize: bool = False, name: str = "mnist",
                   split: str = "train") -> Dataset:
    """Load an IDX image/label file pair (gzipped files are detected).

    Images are flattened to float64 rows scaled to [0, 1]; with
    ``standardize`` they are additionally shifted/scaled to zero mean and
    unit variance per the whole split. Counts must agree between the two
    files. Malformed headers raise :class:`IdxFormatError` naming the
    offending field.
    """
    with _open_maybe_gzip(images_path) as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise IdxFormatError(f"{images_path}: truncated image header", "header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: image magic 0x{magic:08x}, expected "
                f"0x{IDX_IMAGES_MAGIC:08x}", "magic")
        raw = fh.read(n * rows * cols)
        if len(raw) != n * rows * cols:
            raise IdxFormatError(
                f"{images_path}: expected {n * rows * cols} pixels, got {len(raw)}",
                "pixels")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)

    with _open_maybe_gzip(labels_path) as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise IdxFormatError(f"{labels_path}: truncated label header", "header")
        magic, n_labels = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: label magic 0x{magic:08x}, expected "
                f"0x{IDX_LABELS_MAGIC:08x}", "magic")
        raw = fh.read(n_labels)
        if len(raw) != n_labels:
            raise IdxFormatError(
                f"{labels_path}: expected {n_labels} labels, got {len(raw)}",
                "labels")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise IdxFormatError(
            f"{images_path} has {n} images but {labels_path} has "
            f"{n_labels} labels", "count")

    X = images.astype(np.float64) / 255.0
    if standardize:
        mu, sd = X.mean(), X.std()
        X = (X - mu) / (sd if sd > 0 else 1.0)
    return Dataset(inputs=X, labels=labels, n_classes=10, name=name, split=split)


def save_dataset(path: PathLike, ds: Dataset) -> None:
    header = {"kind": "dataset", "n_samples": ds.n_samples, "dim": ds.dim,
              "n_classes": ds.n_classes, "name": ds.name, "split": ds.split,
              "corruption": ds.corruption.to_dict() if ds.corruption else None}
    write_container(path, header, [ds.inputs.ravel(),
                                   ds.labels.astype(np.float64)])


def load_dataset(path: PathLike) -> Dataset:
    header, payload = read_container(path)
    if header.get("kind") != "dataset":
        raise ValueError(f"{path}: kind={header.get('kind')!r}, expected 'dataset'")
    n, d = int(header["n_samples"]), int(header["dim"])
    inputs = payload[:n * d].reshape(n, d)
    labels = payload[n * d:].astype(np.int64)
    corr = header.get("corruption")
    record = None
    if corr:
        record = CorruptionRecord(indices=np.asarray(corr["indices"], dtype=np.int64),
                                  original_labels=np.asarray(corr["original_labels"],
                                                             dtype=np.int64),
                                  fraction=float(corr["fraction"]),
                                  seed=int(corr["seed"]))
    return Dataset(inputs=inputs, labels=labels, n_classes=int(header["n_classes"]),
                   name=header.get("name", "dataset"), split=header.get("split", "train"),
                   corruption=record)


# ---------------------------------------------------------------------------
# MLP oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of the fully-connected classifier.

    ``layer_sizes`` runs input -> hidden... -> classes, e.g.
    (784, 300, 100, 10). Hidden layers are ReLU; the loss is mean softmax
    cross-entropy. Biases and normalization parameters join the
    sparsifiable set only if their flags say so.
    """

    layer_sizes: tuple
    batch_norm: bool = False
    sparsify_biases: bool = False
    sparsify_bn: bool = False
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs >= 2 positive entries")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


def _softmax_ce(logits: FloatArray, labels: IntArray) -> tuple[float, FloatArray]:
    """Mean cross-entropy and d(loss)/d(logits), numerically stable."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


class MlpOracle(ObjectiveOracle):
    """ReLU MLP classifier as an objective over a flat parameter vector.

    Batches are (X, y) tuples. Running batch-norm statistics live on the
    oracle (not in the parameter vector) and only evaluation-mode
    forwards read them.
    """

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        segments = []
        offset = 0
        for l in range(spec.n_layers):
            n_in, n_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
            for suffix, length, sp in self._segment_plan(l, n_in, n_out):
                segments.append(Segment(name=f"layer{l}.{suffix}", offset=offset,
                                        length=length, sparsifiable=sp))
                offset += length
        self._layout = tuple(segments)
        self._dim = offset
        hidden = spec.layer_sizes[1:-1] if spec.batch_norm else ()
        self.running_mean = [np.zeros(h) for h in hidden]
        self.running_var = [np.ones(h) for h in hidden]

    def _segment_plan(self, l: int, n_in: int, n_out: int):
        plan = [("weight", n_in * n_out, True),
                ("bias", n_out, self.spec.sparsify_biases)]
        if self.spec.batch_norm and l < self.spec.n_layers - 1:
            plan.append(("bn_scale", n_out, self.spec.sparsify_bn))
            plan.append(("bn_shift", n_out, self.spec.sparsify_bn))
        return plan

    def dimension(self) -> int:
        return self._dim

    def layout(self):
        return self._layout

    def init_params(self, seed: int = 0) -> ParamVector:
        """Fan-in-scaled uniform init: U(-1/sqrt(n_in), 1/sqrt(n_in))."""
        rng = np.random.default_rng(seed)
        values = np.zeros(self._dim)
        out = ParamVector(values=values, layout=self._layout)
        for l in range(self.spec.n_layers):
            n_in, n_out = self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=n_in * n_out)
            b = rng.uniform(-bound, bound, size=n_out)
            values[self._seg_slice(f"layer{l}.weight")] = w
            values[self._seg_slice(f"layer{l}.bias")] = b
            if self.spec.batch_norm and l < self.spec.n_layers - 1:
                values[self._seg_slice(f"layer{l}.bn_scale")] = 1.0
                values[self._seg_slice(f"layer{l}.bn_shift")] = 0.0
        return ParamVector(values=values, layout=self._layout)

    def _seg_slice(self, name: str) -> slice:
        for seg in self._layout:
            if seg.name == name:
                return seg.slice()
        raise KeyError(name)

    def _unpack(self, x: ParamVector) -> list:
        layers = []
        for l in range(self.spec.n_layers):
            n_in, n_out = self.spec.layer_sizes[l], self.spec.layer_sizes[l + 1]
            W = x.values[self._seg_slice(f"layer{l}.weight")].reshape(n_in, n_out)
            b = x.values[self._seg_slice(f"layer{l}.bias")]
            gamma = beta = None
            if self.spec.batch_norm and l < self.spec.n_layers - 1:
                gamma = x.values[self._seg_slice(f"layer{l}.bn_scale")]
                beta = x.values[self._seg_slice(f"layer{l}.bn_shift")]
            layers.append((W, b, gamma, beta))
        return layers

    def _forward(self, layers: list, X: FloatArray, train: bool,
                 keep_cache: bool = False):
        """Forward pass; returns (logits, cache) where cache has per-layer
        intermediates needed by backprop (None unless keep_cache)."""
        eps = self.spec.bn_eps
        h = X
        cache = [] if keep_cache else None
        for l, (W, b, gamma, beta) in enumerate(layers):
            last = l == len(layers) - 1
            a = h @ W + b
            if gamma is not None:
                if train:
                    mu = a.mean(axis=0)
                    var = a.var(axis=0)
                else:
                    mu = self.running_mean[l]
                    var = self.running_var[l]
                inv = 1.0 / np.sqrt(var + eps)
                ahat = (a - mu) * inv
                s = gamma * ahat + beta
            else:
                inv = ahat = None
                s = a
            out = s if last else np.maximum(s, 0.0)
            if keep_cache:
                cache.append({"h_in": h, "a": a, "ahat": ahat, "inv": inv,
                              "s": s})
            h = out
        return h, cache

    def _loss_and_grad(self, x: ParamVector, batch) -> tuple[float, FloatArray]:
        X, y = batch
        layers = self._unpack(x)
        logits, cache = self._forward(layers, np.asarray(X, dtype=np.float64),
                                      train=True, keep_cache=True)
        loss, dlogits = _softmax_ce(logits, np.asarray(y))
        grad = np.zeros(self._dim)
        dh = dlogits
        B = dlogits.shape[0]
        for l in reversed(range(len(layers))):
            W, b, gamma, beta = layers[l]
            c = cache[l]
            last = l == len(layers) - 1
            ds = dh if last else dh * (c["s"] > 0.0)
            if gamma is not None:
                dgamma = (ds * c["ahat"]).sum(axis=0)
                dbeta = ds.sum(axis=0)
                dahat = ds * gamma
                da = (c["inv"] / B) * (B * dahat - dahat.sum(axis=0)
                                       - c["ahat"] * (dahat * c["ahat"]).sum(axis=0))
                grad[self._seg_slice(f"layer{l}.bn_scale")] = dgamma
                grad[self._seg_slice(f"layer{l}.bn_shift")] = dbeta
            else:
                da = ds
            grad[self._seg_slice(f"layer{l}.weight")] = (c["h_in"].T @ da).ravel()
            grad[self._seg_slice(f"layer{l}.bias")] = da.sum(axis=0)
            if l > 0:
                dh = da @ W.T
        return loss, grad

    def value(self, x: ParamVector, batch: object = None) -> float:
        if batch is None:
            raise ValueError("MLP oracle needs an (X, y) batch")
        X, y = batch
        layers = self._unpack(x)
        logits, _ = self._forward(layers, np.asarray(X, dtype=np.float64), train=True)
        loss, _ = _softmax_ce(logits, np.asarray(y))
        return loss

    def gradient(self, x: ParamVector, batch: object = None) -> ParamVector:
        if batch is None:
            raise ValueError("MLP oracle needs an (X, y) batch")
        _, grad = self._loss_and_grad(x, batch)
        return x.with_values(grad)

    def value_and_gradient(self, x: ParamVector, batch: object = None):
        if batch is None:
            raise ValueError("MLP oracle needs an (X, y) batch")
        loss, grad = self._loss_and_grad(x, batch)
        return loss, x.with_values(grad)

    def predict_logits(self, x: ParamVector, X: FloatArray,
                       mode: str = "eval") -> FloatArray:
        """Class scores; eval mode reads running statistics (if any)."""
        if mode not in ("eval", "train"):
            raise ValueError(f"mode must be 'eval' or 'train', got {mode!r}")
        layers = self._unpack(x)
        logits, _ = self._forward(layers, np.asarray(X, dtype=np.float64),
                                  train=(mode == "train"))
        return logits

    def accuracy(self, x: ParamVector, ds: Dataset, mode: str = "eval") -> float:
        logits = self.predict_logits(x, ds.inputs, mode=mode)
        return float((logits.argmax(axis=1) == ds.labels).mean())


def build_mlp_oracle(spec: MlpSpec) -> MlpOracle:
    return MlpOracle(spec)


def batchnorm_tune(oracle: MlpOracle, x: ParamVector, ds: Dataset,
                   n_samples: int = 10000, batch_size: int = 128,
                   seed: int = 0) -> dict:
    """Recompute running batch-norm statistics with weights frozen.

    Streams about ``n_samples`` tuning samples through training-mode
    forwards (each batch normalized by its own moments, as during
    training) while accumulating exact sums and sums of squares of the
    pre-normalization activations. Sets the oracle's running statistics
    to the global moments of what was seen and returns
    {layer_index: (mean, var)}; ``x`` is read, never written.

    On a model without batch norm this warns and changes nothing.
    """
    if not oracle.spec.batch_norm:
        warnings.warn("model has no batch norm; nothing to tune")
        return {}
    layers = oracle._unpack(x)
    hidden = oracle.spec.layer_sizes[1:-1]
    sums = [np.zeros(h) for h in hidden]
    sumsq = [np.zeros(h) for h in hidden]
    count = 0
    eps = oracle.spec.bn_eps

    stream = batch_stream(ds, batch_size=min(batch_size, ds.n_samples), seed=seed)
    while count < n_samples:
        X, _ = next(stream)
        h = X
        for l, (W, b, gamma, beta) in enumerate(layers):
            last = l == len(layers) - 1
            a = h @ W + b
            if gamma is not None:
                sums[l] += a.sum(axis=0)
                sumsq[l] += (a * a).sum(axis=0)
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                s = gamma * (a - mu) / np.sqrt(var + eps) + beta
            else:
                s = a
            h = s if last else np.maximum(s, 0.0)
        count += X.shape[0]

    stats = {}
    for l in range(len(hidden)):
        mean = sums[l] / count
        var = sumsq[l] / count - mean * mean
        oracle.running_mean[l] = mean
        oracle.running_var[l] = np.maximum(var, 0.0)
        stats[l] = (mean, oracle.running_var[l])
    return stats
