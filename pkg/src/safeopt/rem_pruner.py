"""Single-layer pruning against reconstruction error on real activations.

Given a trained linear layer W0 and a matrix A of inputs that reach it,
the quantity of interest is the reconstruction error moved onto the
layer's output:

    REM(W) = || A W - A W0 ||_F^2 / n_samples

One-shot methods (magnitude, activation-weighted magnitude) pick a mask
and keep W0's surviving values; the optimizer-based methods treat REM(W)
as a training objective and move the surviving weights as well, which is
where the splitting optimizer earns its keep at high sparsity.

Weight layout convention: vectors are vec(W^T), so consecutive entries
run along the *input* dimension of one output unit. n-of-m patterns
therefore group input weights per output unit (the usual hardware
convention), and the activation-energy saliency tiles cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (FloatArray, ObjectiveOracle, ParamVector, Schedule,
                   SparsityTarget, single_segment_layout, sparsity_to_count)
from .projection import (SaliencyDiagonal, build_saliency, p_weighted_projection,
                         project_to_target)
from .safe_optimizer import SafeConfig, run_safe
from .serialization import PathLike, read_container, write_container

REM_METHODS = ("magnitude", "wanda", "safe", "safe-plus")


@dataclass(frozen=True)
class ActivationBatch:
    """Inputs that reached a layer: one row per sample."""

    matrix: FloatArray
    source: str = "unspecified"

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("activation matrix must be 2-D (samples x features)")
        if not np.isfinite(m).all():
            raise ValueError("activation matrix must be finite")
        object.__setattr__(self, "matrix", m)

    @property
    def n_samples(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.matrix.shape[1])


@dataclass(frozen=True)
class LinearLayer:
    """Dense layer y = x W + b with W of shape d_in x d_out."""

    W: FloatArray
    bias: Optional[FloatArray] = None
    name: str = "layer"

    def __post_init__(self) -> None:
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError("W must be 2-D")
        if not np.isfinite(W).all():
            raise ValueError("W must be finite")
        object.__setattr__(self, "W", W)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64)
            if b.shape != (W.shape[1],):
                raise ValueError(f"bias shape {b.shape} != ({W.shape[1]},)")
            object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return int(self.W.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.W.shape[1])


def layer_to_vec(W: FloatArray) -> FloatArray:
    """vec(W^T): input dimension fastest."""
    return np.ascontiguousarray(np.asarray(W).T).ravel()


def vec_to_layer(x: FloatArray, d_in: int, d_out: int) -> FloatArray:
    return np.asarray(x).reshape(d_out, d_in).T.copy()


def rem_objective(W: FloatArray, W0: FloatArray, A: FloatArray
                  ) -> tuple[float, FloatArray]:
    """Reconstruction error and its gradient in W, computed directly."""
    W = np.asarray(W, dtype=np.float64)
    W0 = np.asarray(W0, dtype=np.float64)
    A = np.asarray(getattr(A, "matrix", A), dtype=np.float64)
    if W.shape != W0.shape:
        raise ValueError(f"shape mismatch {W.shape} vs {W0.shape}")
    if A.shape[1] != W.shape[0]:
        raise ValueError(f"activations width {A.shape[1]} != d_in {W.shape[0]}")
    n = A.shape[0]
    R = A @ (W - W0)
    value = float(np.sum(R * R) / n)
    grad = (2.0 / n) * (A.T @ R)
    return value, grad


class RemOracle(ObjectiveOracle):
    """REM(W) as an ObjectiveOracle over x = vec(W^T).

    Caches G = A^T A / n once, so each value/gradient costs two d_in x
    d_in matmuls instead of touching the sample dimension. Batch is
    ignored (the activation matrix is the whole dataset).
    """

    def __init__(self, layer: LinearLayer, activations: ActivationBatch):
        if activations.d_in != layer.d_in:
            raise ValueError(f"activations width {activations.d_in} != layer "
                             f"d_in {layer.d_in}")
        self.layer = layer
        self.activations = activations
        self.W0 = layer.W.copy()
        self.G = activations.matrix.T @ activations.matrix / activations.n_samples

    def dimension(self) -> int:
        return self.layer.d_in * self.layer.d_out

    def layout(self):
        return single_segment_layout(self.dimension(), name=f"{self.layer.name}.weight")

    def _as_W(self, x: ParamVector) -> FloatArray:
        return vec_to_layer(x.values, self.layer.d_in, self.layer.d_out)

    def value(self, x: ParamVector, batch: object = None) -> float:
        D = self._as_W(x) - self.W0
        return float(np.sum(D * (self.G @ D)))

    def gradient(self, x: ParamVector, batch: object = None) -> ParamVector:
        D = self._as_W(x) - self.W0
        return x.with_values(layer_to_vec(2.0 * (self.G @ D)))

    def init_params(self, seed: int = 0) -> ParamVector:
        return ParamVector(values=layer_to_vec(self.W0), layout=self.layout())


def wanda_saliency(layer_vec_len: int, activations: ActivationBatch) -> SaliencyDiagonal:
    return build_saliency("wanda", x=np.zeros(layer_vec_len), activations=activations)


@dataclass
class RemPruneConfig:
    """Knobs for the optimizer-based layer pruning methods."""

    steps: int = 2000
    lr: Union[Schedule, float] = 0.01
    rho: Union[Schedule, float] = 0.01
    penalty: Union[Schedule, float] = field(
        default_factory=lambda: Schedule.cosine_warmup(0.3))
    dual_interval: int = 16
    base: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.95)
    comparison_group: str = "layer"  # "layer" or "row" for the one-shot methods
    seed: int = 0


@dataclass(frozen=True)
class PruneReport:
    """Outcome of prune_layer: the pruned layer plus bookkeeping."""

    layer: LinearLayer
    method: str
    rem_value: float
    target: str
    kept: int
    total: int
    pattern_ok: bool
    steps_run: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rem_value": self.rem_value,
            "target": self.target,
            "kept": self.kept,
            "total": self.total,
            "sparsity": 1.0 - self.kept / self.total,
            "pattern_ok": self.pattern_ok,
            "steps_run": self.steps_run,
            "layer": self.layer.name,
            "d_in": self.layer.d_in,
            "d_out": self.layer.d_out,
        }


def _pattern_feasible(x: FloatArray, pattern: Optional[tuple[int, int]]) -> bool:
    if pattern is None:
        return True
    n_keep, m = pattern
    groups = x.reshape(-1, m)
    return bool(np.all(np.count_nonzero(groups, axis=1) <= n_keep))


def _oneshot_row(vec: FloatArray, d_in: int, d_out: int, target: SparsityTarget,
                 P: Optional[SaliencyDiagonal]) -> FloatArray:
    """Per-output-unit selection: each row of W^T keeps its own quota."""
    out = np.zeros_like(vec)
    d_row = sparsity_to_count(target, d_in) if target.pattern is None else None
    for j in range(d_out):
        sl = slice(j * d_in, (j + 1) * d_in)
        if target.pattern is not None:
            out[sl] = project_to_target(vec[sl], target,
                                        None if P is None else
                                        SaliencyDiagonal(P.entries[sl], P.mode))
        elif P is None:
            out[sl] = project_to_target(vec[sl], SparsityTarget.from_count(d_row))
        else:
            out[sl] = p_weighted_projection(vec[sl], d_row,
                                            SaliencyDiagonal(P.entries[sl], P.mode))
    return out


def prune_layer(layer: LinearLayer, activations: ActivationBatch,
                target: SparsityTarget, method: str,
                config: Optional[RemPruneConfig] = None) -> PruneReport:
    """Prune one linear layer to ``target`` sparsity with ``method``.

    * ``magnitude``  -- one-shot |W| mask, surviving values untouched.
    * ``wanda``      -- one-shot mask scored by |W| * activation column
      norm (saliency-weighted magnitude), surviving values untouched.
    * ``safe``       -- splitting optimizer on REM(W), identity metric.
    * ``safe-plus``  -- splitting optimizer with the activation-energy
      (wanda) metric in the projection.

    One-shot methods compare scores across the whole layer by default;
    set ``config.comparison_group = "row"`` for per-output-unit quotas.
    The bias is never pruned.
    """
    if method not in REM_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {REM_METHODS}")
    config = config or RemPruneConfig()
    if activations.d_in != layer.d_in:
        raise ValueError(f"activations width {activations.d_in} != layer "
                         f"d_in {layer.d_in}")
    if target.pattern is not None and layer.d_in % target.pattern[1] != 0:
        raise ValueError(f"group size {target.pattern[1]} must divide "
                         f"d_in={layer.d_in} (groups run along the input dim)")

    vec0 = layer_to_vec(layer.W)
    n = vec0.shape[0]
    steps_run = 0

    if method in ("magnitude", "wanda"):
        P = wanda_saliency(n, activations) if method == "wanda" else None
        if config.comparison_group == "row":
            x_sparse = _oneshot_row(vec0, layer.d_in, layer.d_out, target, P)
        else:
            x_sparse = project_to_target(vec0, target, P)
    else:
        oracle = RemOracle(layer, activations)
        saliency_fn = None
        saliency_mode = None
        if method == "safe-plus":
            P_fixed = wanda_saliency(n, activations)
            saliency_fn = lambda x, batch: P_fixed  # noqa: E731 (A is fixed)
            saliency_mode = "wanda"
        safe_cfg = SafeConfig(
            steps=config.steps, target=target, lr=config.lr, rho=config.rho,
            penalty=config.penalty, dual_interval=config.dual_interval,
            saliency=saliency_mode, base=config.base,
            adam_betas=config.adam_betas, seed=config.seed)
        result = run_safe(oracle, None, safe_cfg,
                          x_init=oracle.init_params(config.seed),
                          saliency_fn=saliency_fn)
        x_sparse = result.x_sparse.values
        steps_run = config.steps

    W_pruned = vec_to_layer(x_sparse, layer.d_in, layer.d_out)
    rem_value, _ = rem_objective(W_pruned, layer.W, activations.matrix)
    kept = int(np.count_nonzero(x_sparse))
    return PruneReport(
        layer=LinearLayer(W=W_pruned, bias=layer.bias, name=layer.name),
        method=method,
        rem_value=rem_value,
        target=target.describe(),
        kept=kept,
        total=n,
        pattern_ok=_pattern_feasible(x_sparse, target.pattern),
        steps_run=steps_run,
    )


def synth_activations(n_samples: int, d_in: int, seed: int = 0,
                      spectrum_exponent: float = 1.0) -> ActivationBatch:
    """Anisotropic Gaussian activations: feature i has variance i^-exponent.

    The decaying spectrum is what separates activation-aware scores from
    plain magnitude: low-energy features can't hurt the output much, so
    their weights are cheap to prune.
    """
    if n_samples < 1 or d_in < 1:
        raise ValueError("n_samples and d_in must be positive")
    rng = np.random.default_rng(seed)
    scales = np.arange(1, d_in + 1, dtype=np.float64) ** (-spectrum_exponent / 2.0)
    return ActivationBatch(matrix=rng.standard_normal((n_samples, d_in)) * scales,
                           source=f"synthetic(exponent={spectrum_exponent:g}, seed={seed})")


# ---------------------------------------------------------------------------
# Layer and activation files (shared binary container)
# ---------------------------------------------------------------------------


def save_layer(path: PathLike, layer: LinearLayer) -> None:
    header = {"kind": "linear_layer", "d_in": layer.d_in, "d_out": layer.d_out,
              "has_bias": layer.bias is not None, "name": layer.name}
    arrays = [layer.W.ravel()]
    if layer.bias is not None:
        arrays.append(layer.bias)
    write_container(path, header, arrays)


def load_layer(path: PathLike) -> LinearLayer:
    header, payload = read_container(path)
    if header.get("kind") != "linear_layer":
        raise ValueError(f"{path}: kind={header.get('kind')!r}, expected 'linear_layer'")
    d_in, d_out = int(header["d_in"]), int(header["d_out"])
    W = payload[:d_in * d_out].reshape(d_in, d_out)
    bias = payload[d_in * d_out:] if header.get("has_bias") else None
    return LinearLayer(W=W, bias=bias, name=header.get("name", "layer"))


def save_activations(path: PathLike, acts: ActivationBatch) -> None:
    write_container(path, {"kind": "activations", "n_samples": acts.n_samples,
                           "d_in": acts.d_in, "source": acts.source},
                    [acts.matrix.ravel()])


def load_activations(path: PathLike) -> ActivationBatch:
    header, payload = read_container(path)
    if header.get("kind") != "activations":
        raise ValueError(f"{path}: kind={header.get('kind')!r}, expected 'activations'")
    n, d = int(header["n_samples"]), int(header["d_in"])
    return ActivationBatch(matrix=payload.reshape(n, d),
                           source=header.get("source", "file"))
