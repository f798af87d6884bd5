"""Experiment harness: configs, runners, self-verification, reports.

A run is fully determined by an :class:`ExperimentConfig` (a JSON-stable
dict of model/data/optimizer choices) plus a seed. The harness enforces
the fair-comparison contract -- every method under the same config+seed
gets the same initialization and the same batch order -- and writes a
self-describing directory per seed:

    <out_dir>/<name>/config.json
    <out_dir>/<name>/seed_<s>/trace.jsonl
    <out_dir>/<name>/seed_<s>/checkpoint_dense.bin
    <out_dir>/<name>/seed_<s>/checkpoint_sparse.bin
    <out_dir>/<name>/seed_<s>/summary.json
    <out_dir>/<name>/aggregate.json

Reruns with an unchanged config hash are skipped unless forced.
:func:`verify_suite` re-derives the package's core numerics against
independent oracles (support enumeration, finite differences, dense
eigensolvers) and is what the CLI's ``verify`` subcommand runs.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .baselines import BaselineConfig, magnitude_prune_oneshot, run_cram, run_imp_sam
from .core import (DivergenceError, FloatArray, ObjectiveOracle, ParamVector,
                   QuadraticOracle, Schedule, SparsityTarget, as_param_vector,
                   schedule_eval, sparsity_to_count)
from .models_data import (Dataset, MlpOracle, MlpSpec, batch_stream, batchnorm_tune,
                          corrupt_labels, load_mnist_idx, subset, synth_blobs)
from .projection import SaliencyDiagonal, hard_threshold, p_weighted_projection
from .safe_optimizer import (SafeConfig, TrainResult, lemma_schedule_check,
                             run_safe, stationarity_gap)
from .serialization import (PathLike, load_checkpoint, save_checkpoint,
                            write_trace_jsonl)
from .sharpness import hvp, max_hessian_eigenvalue, sam_gradient

METHODS = ("safe", "admm", "imp-sam", "cram", "magnitude-oneshot")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything a run needs, JSON round-trippable.

    ``model`` / ``data`` / ``optim`` are plain dicts validated at build
    time; ``out_dir`` is excluded from the config hash (where results
    land does not change what the experiment is).
    """

    name: str
    method: str
    model: dict
    data: dict
    optim: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.name:
            raise ConfigError("experiment name must be nonempty")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("need at least one seed")

    def to_dict(self) -> dict:
        return {"name": self.name, "method": self.method, "model": self.model,
                "data": self.data, "optim": self.optim,
                "seeds": list(self.seeds), "out_dir": self.out_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls(name=d["name"], method=d["method"], model=dict(d["model"]),
                       data=dict(d.get("data", {"kind": "none"})),
                       optim=dict(d.get("optim", {})),
                       seeds=tuple(d.get("seeds", [0])),
                       out_dir=d.get("out_dir", "runs"))
        except KeyError as exc:
            raise ConfigError(f"config missing required key {exc}") from None

    @classmethod
    def from_json_file(cls, path: PathLike) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON: {exc}") from None
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(payload)

    def write_json(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    payload = config.to_dict()
    payload.pop("out_dir")
    return hashlib.sha256(_canonical_json(payload).encode("utf-8")).hexdigest()


def model_data_hash(config: ExperimentConfig) -> str:
    payload = {"model": config.model, "data": config.data}
    return hashlib.sha256(_canonical_json(payload).encode("utf-8")).hexdigest()


def apply_overrides(config_dict: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.path=json_value`` overrides to a config dict (in place).

    Values parse as JSON when possible and fall back to raw strings, so
    ``--set optim.lr=0.05`` and ``--set data.kind=blobs`` both work.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config_dict
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not an object")
        node[parts[-1]] = value
    return config_dict


def _schedule_from_json(value) -> Union[Schedule, float]:
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        try:
            return Schedule(kind=value["kind"], start=float(value.get("start", 0.0)),
                            end=(None if value.get("end") is None else float(value["end"])),
                            exponent=(None if value.get("exponent") is None
                                      else float(value["exponent"])))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad schedule spec {value}: {exc}") from None
    raise ConfigError(f"schedule must be a number or an object, got {value!r}")


def _target_from_json(optim: dict) -> SparsityTarget:
    if "pattern" in optim and optim["pattern"] is not None:
        n_keep, m = optim["pattern"]
        return SparsityTarget.n_of_m(int(n_keep), int(m))
    if "sparsity" in optim:
        return SparsityTarget.from_fraction(float(optim["sparsity"]))
    if "keep_count" in optim:
        return SparsityTarget.from_count(int(optim["keep_count"]))
    raise ConfigError("optim needs one of: sparsity, keep_count, pattern")


# ---------------------------------------------------------------------------
# Test problems (quadratic family with known sparse optima)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestProblem:
    """A quadratic with a brute-force-certified sparse optimum.

    f(x) = 0.5 (x - c)^T Q (x - c), Q positive definite; the optimum over
    {||x||_0 <= d} is found at construction by enumerating supports and
    solving the restricted normal equations, so n is capped at 12.
    beta is the exact smoothness constant (largest eigenvalue of Q); the
    weak-convexity constant of a convex quadratic is 0.
    """

    oracle: QuadraticOracle
    target: SparsityTarget
    x_opt: FloatArray
    f_opt: float
    beta: float
    mu: float = 0.0

    @classmethod
    def generate(cls, n: int, d: int, seed: int = 0, kappa: float = 10.0,
                 diagonal: bool = False) -> "TestProblem":
        if n > 12:
            raise ValueError("brute-force certification is capped at n = 12")
        if not (1 <= d <= n):
            raise ValueError(f"need 1 <= d <= n, got d={d}, n={n}")
        rng = np.random.default_rng(seed)
        eigs = np.concatenate([[1.0, kappa], rng.uniform(1.0, kappa, size=n - 2)]) \
            if n >= 2 else np.array([1.0])
        if diagonal:
            Q = np.diag(eigs)
        else:
            V = np.linalg.qr(rng.standard_normal((n, n)))[0]
            Q = V @ np.diag(eigs) @ V.T
            Q = (Q + Q.T) / 2.0
        c = rng.standard_normal(n) * 2.0
        oracle = QuadraticOracle(Q, center=c)
        x_opt, f_opt = brute_force_sparse_optimum(Q, c, d)
        return cls(oracle=oracle, target=SparsityTarget.from_count(d),
                   x_opt=x_opt, f_opt=f_opt, beta=float(np.max(eigs)))


def brute_force_sparse_optimum(Q: FloatArray, c: FloatArray, d: int
                               ) -> tuple[FloatArray, float]:
    """Exact argmin of 0.5 (x-c)^T Q (x-c) over ||x||_0 <= d by support
    enumeration (first support in lexicographic order wins ties)."""
    n = Q.shape[0]
    Qc = Q @ c
    best_x, best_f = None, np.inf
    for support in itertools.combinations(range(n), d):
        S = list(support)
        x = np.zeros(n)
        x[S] = np.linalg.solve(Q[np.ix_(S, S)], Qc[S])
        diff = x - c
        f = 0.5 * float(diff @ (Q @ diff))
        if f < best_f - 1e-15:
            best_x, best_f = x, f
    return best_x, best_f


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_model(model: dict, data_dim: Optional[int] = None,
                n_classes: Optional[int] = None):
    """Oracle from a model dict; returns (oracle, extra) where extra holds
    kind-specific objects (the TestProblem for quadratics)."""
    kind = model.get("kind")
    if kind == "mlp":
        sizes = list(model.get("layer_sizes", []))
        if data_dim is not None and sizes and sizes[0] != data_dim:
            raise ConfigError(f"mlp input size {sizes[0]} != data dim {data_dim}")
        if n_classes is not None and sizes and sizes[-1] != n_classes:
            raise ConfigError(f"mlp output size {sizes[-1]} != n_classes {n_classes}")
        spec = MlpSpec(layer_sizes=tuple(sizes),
                       batch_norm=bool(model.get("batch_norm", False)),
                       sparsify_biases=bool(model.get("sparsify_biases", False)),
                       sparsify_bn=bool(model.get("sparsify_bn", False)))
        return MlpOracle(spec), None
    if kind == "quadratic":
        problem = TestProblem.generate(
            n=int(model.get("n", 8)),
            d=int(model.get("d", 3)),
            seed=int(model.get("seed", 0)),
            kappa=float(model.get("kappa", 10.0)),
            diagonal=bool(model.get("diagonal", False)))
        return problem.oracle, problem
    raise ConfigError(f"unknown model kind {kind!r}")


def build_data(data: dict) -> Optional[tuple[Dataset, Optional[Dataset]]]:
    """(train, test) datasets from a data dict; None for kind 'none'."""
    kind = data.get("kind", "none")
    if kind == "none":
        return None
    if kind == "blobs":
        seed = int(data.get("seed", 0))
        train = synth_blobs(n_samples=int(data.get("n_train", 2000)),
                            dim=int(data.get("dim", 20)),
                            n_classes=int(data.get("classes", 4)),
                            separation=float(data.get("separation", 3.0)),
                            seed=seed)
        test = synth_blobs(n_samples=int(data.get("n_test", 500)),
                           dim=int(data.get("dim", 20)),
                           n_classes=int(data.get("classes", 4)),
                           separation=float(data.get("separation", 3.0)),
                           seed=seed + 1)
    elif kind == "mnist-idx":
        root = Path(data.get("dir", "data/mnist"))
        train = load_mnist_idx(root / data.get("train_images", "train-images-idx3-ubyte"),
                               root / data.get("train_labels", "train-labels-idx1-ubyte"),
                               standardize=bool(data.get("standardize", False)),
                               split="train")
        test = load_mnist_idx(root / data.get("test_images", "t10k-images-idx3-ubyte"),
                              root / data.get("test_labels", "t10k-labels-idx1-ubyte"),
                              standardize=bool(data.get("standardize", False)),
                              split="test")
    else:
        raise ConfigError(f"unknown data kind {kind!r}")

    n_train = data.get("n_train_subset")
    if n_train:
        train = subset(train, np.arange(int(n_train)), split="train")
    frac = float(data.get("corrupt_fraction", 0.0))
    if frac > 0.0:
        train = corrupt_labels(train, frac, seed=int(data.get("corrupt_seed", 0)))
    return train, test


def _optim_common(optim: dict) -> dict:
    return {
        "lr": _schedule_from_json(optim.get("lr", 0.1)),
        "rho": _schedule_from_json(optim.get("rho", 0.0)),
        "log_every": int(optim.get("log_every", 50)),
        "eval_every": optim.get("eval_every"),
        "steps": int(optim.get("steps", 3000)),
    }


def _multi_targets(optim: dict) -> Optional[tuple]:
    fractions = optim.get("multi")
    if not fractions:
        return None
    return tuple(SparsityTarget.from_fraction(float(f)) for f in fractions)


def run_method(method: str, oracle: ObjectiveOracle, stream, optim: dict,
               target: SparsityTarget, seed: int,
               eval_hooks=None) -> TrainResult:
    """Dispatch one training run; all methods share init and stream."""
    common = _optim_common(optim)
    x_init = oracle.init_params(seed)
    if method in ("safe", "admm"):
        cfg = SafeConfig(
            steps=common["steps"], target=target, lr=common["lr"],
            rho=0.0 if method == "admm" else common["rho"],
            penalty=_schedule_from_json(optim.get("penalty", 1e-2)),
            dual_interval=int(optim.get("dual_interval", 32)),
            saliency=optim.get("saliency"),
            sg=bool(optim.get("sg", False)),
            multi=_multi_targets(optim),
            base=optim.get("base", "sgd"),
            obd_probes=int(optim.get("obd_probes", 8)),
            log_every=common["log_every"], eval_every=common["eval_every"],
            seed=seed)
        return run_safe(oracle, stream, cfg, x_init=x_init, eval_hooks=eval_hooks)
    if method == "imp-sam":
        cfg = BaselineConfig(
            steps=common["steps"], target=target, lr=common["lr"],
            rho=common["rho"],
            prune_interval=int(optim.get("prune_interval", 1000)),
            prune_schedule=optim.get("prune_schedule", "cubic"),
            log_every=common["log_every"], eval_every=common["eval_every"],
            seed=seed)
        return run_imp_sam(oracle, stream, cfg, x_init=x_init, eval_hooks=eval_hooks)
    if method == "cram":
        cfg = BaselineConfig(
            steps=common["steps"], target=target, lr=common["lr"],
            rho=common["rho"], plus=bool(optim.get("plus", False)),
            multi=_multi_targets(optim),
            log_every=common["log_every"], eval_every=common["eval_every"],
            seed=seed)
        return run_cram(oracle, stream, cfg, x_init=x_init, eval_hooks=eval_hooks)
    if method == "magnitude-oneshot":
        x_sparse = magnitude_prune_oneshot(x_init, target)
        return TrainResult(x_dense=x_init, x_sparse=x_sparse, trace=[])
    raise ConfigError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    root: Path
    summaries: list


def _final_metrics(oracle, result: TrainResult, train: Optional[Dataset],
                   test: Optional[Dataset], problem: Optional[TestProblem],
                   optim: dict, target: SparsityTarget) -> dict:
    metrics: dict = {}
    if isinstance(oracle, MlpOracle) and train is not None:
        if oracle.spec.batch_norm:
            batchnorm_tune(oracle, result.x_sparse, train,
                           n_samples=int(optim.get("bnt_samples", 10000)))
        if test is not None:
            metrics["test_acc_dense"] = oracle.accuracy(result.x_dense, test)
            metrics["test_acc_sparse"] = oracle.accuracy(result.x_sparse, test)
        metrics["train_acc_dense"] = oracle.accuracy(result.x_dense, train)
        metrics["train_acc_sparse"] = oracle.accuracy(result.x_sparse, train)
    if problem is not None:
        delta = max(2.0 * problem.beta,
                    float(optim.get("stationarity_delta", 0.0)))
        metrics["stationarity_gap"] = stationarity_gap(
            problem.oracle, result.x_sparse, delta, problem.target)
        metrics["f_gap_to_opt"] = problem.oracle.value(result.x_sparse) - problem.f_opt
        if result.dual is not None:
            metrics["dist_inf_x_z"] = float(
                np.max(np.abs(result.x_dense.values - result.dual.z)))
    return metrics


def run_experiment(config: ExperimentConfig, force: bool = False,
                   base_dir: Optional[PathLike] = None,
                   data_override: Optional[tuple] = None) -> ExperimentResult:
    """Run every seed of an experiment, skipping seeds already on disk.

    ``data_override`` injects (train, test) datasets directly, bypassing
    the data dict (used by tests and notebook-style callers); the config
    hash still governs idempotence.
    """
    root = Path(base_dir or config.out_dir) / config.name
    root.mkdir(parents=True, exist_ok=True)
    chash = config_hash(config)
    config.write_json(root / "config.json")

    if data_override is not None:
        train, test = data_override
    else:
        built = build_data(config.data)
        train, test = built if built is not None else (None, None)

    summaries = []
    for seed in config.seeds:
        seed_dir = root / f"seed_{seed}"
        summary_path = seed_dir / "summary.json"
        if summary_path.exists() and not force:
            with open(summary_path, "r", encoding="utf-8") as fh:
                existing = json.load(fh)
            if existing.get("config_hash") == chash:
                print(f"[skip] {seed_dir} is up to date (config hash match)")
                summaries.append(existing)
                continue
        seed_dir.mkdir(parents=True, exist_ok=True)

        oracle, problem = build_model(
            config.model,
            data_dim=None if train is None else train.dim,
            n_classes=None if train is None else train.n_classes)
        target = _target_from_json(config.optim)
        stream = None
        if train is not None:
            stream = batch_stream(train, int(config.optim.get("batch_size", 128)),
                                  seed=seed)

        t0 = time.perf_counter()
        summary = {"config_hash": chash, "seed": seed, "method": config.method,
                   "name": config.name, "target": target.describe()}
        try:
            result = run_method(config.method, oracle, stream, config.optim,
                                target, seed)
        except DivergenceError as exc:
            summary.update({"diverged": True, "snapshot": exc.snapshot,
                            "runtime_s": time.perf_counter() - t0})
            with open(seed_dir / "divergence.json", "w", encoding="utf-8") as fh:
                json.dump(exc.snapshot, fh, indent=2, sort_keys=True)
            with open(summary_path, "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
            summaries.append(summary)
            continue

        write_trace_jsonl(result.trace, seed_dir / "trace.jsonl")
        save_checkpoint(seed_dir / "checkpoint_dense.bin", result.x_dense,
                        config_hash=chash)
        save_checkpoint(seed_dir / "checkpoint_sparse.bin", result.x_sparse,
                        config_hash=chash)

        metrics = _final_metrics(oracle, result, train, test, problem,
                                 config.optim, target)
        n_sp = result.x_sparse.sparsifiable_count()
        summary.update({
            "diverged": False,
            "steps": int(config.optim.get("steps", 3000)),
            "final_loss": result.trace[-1]["loss"] if result.trace else None,
            "kept": result.x_sparse.nonzero_count(),
            "sparsity": 1.0 - result.x_sparse.nonzero_count() / n_sp,
            "metrics": metrics,
            "runtime_s": time.perf_counter() - t0,
        })
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        summaries.append(summary)

    aggregate = _aggregate(summaries)
    with open(root / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
    return ExperimentResult(config=config, root=root, summaries=summaries)


def _aggregate(summaries: list) -> dict:
    ok = [s for s in summaries if not s.get("diverged")]
    out = {"n_seeds": len(summaries), "n_diverged": len(summaries) - len(ok)}
    if not ok:
        return out
    keys = set()
    for s in ok:
        keys.update(s.get("metrics", {}).keys())
    for key in sorted(keys):
        vals = [s["metrics"][key] for s in ok if key in s.get("metrics", {})]
        if vals:
            out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                        "values": [float(v) for v in vals]}
    return out

# ---------------------------------------------------------------------------
# Self-verification suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: measured={self.measured:.3e} "
                f"tol={self.tolerance:.3e}{' ' + self.detail if self.detail else ''}")


@dataclass
class VerifyReport:
    scope: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failing(self) -> list:
        return [c for c in self.checks if not c.passed]

    def lines(self) -> list:
        body = [c.line() for c in self.checks]
        n_fail = len(self.failing())
        body.append(f"verify scope={self.scope}: {len(self.checks) - n_fail}/"
                    f"{len(self.checks)} checks passed")
        return body


def _enum_best_support(scores: FloatArray, d: int) -> tuple:
    """Smallest-loss support by exhaustive search; lexicographically first
    combination wins ties. Independent of the partition-based selection."""
    n = scores.shape[0]
    best, best_cost = None, np.inf
    for support in itertools.combinations(range(n), d):
        cost = float(scores.sum() - scores[list(support)].sum())
        if cost < best_cost - 1e-18:
            best, best_cost = support, cost
    return best


def _projection_checks(seed: int, projection_fn: Optional[Callable]) -> list:
    proj = projection_fn if projection_fn is not None else hard_threshold
    rng = np.random.default_rng(seed)
    checks = []

    worst = 0.0
    ok = True
    for i in range(40):
        n = int(rng.integers(3, 13))
        d = int(rng.integers(1, n + 1))
        v = rng.standard_normal(n)
        out = np.asarray(proj(v, d))
        support = tuple(np.flatnonzero(out))
        best = _enum_best_support(v * v, d)
        expected = np.zeros(n)
        expected[list(best)] = v[list(best)]
        err = float(np.max(np.abs(out - expected)))
        worst = max(worst, err)
        ok = ok and support == tuple(i for i in best if v[i] != 0.0) and err <= 1e-12
    checks.append(CheckResult("projection.hard_vs_enumeration", ok, worst, 1e-12,
                              "40 random instances, n <= 12"))

    worst = 0.0
    ok = True
    for i in range(40):
        n = int(rng.integers(3, 13))
        d = int(rng.integers(1, n + 1))
        v = rng.standard_normal(n)
        p = rng.uniform(0.1, 5.0, size=n)
        P = SaliencyDiagonal(entries=p, mode="identity")
        out = np.asarray(p_weighted_projection(v, d, P))
        best = _enum_best_support(P.entries * v * v, d)
        expected = np.zeros(n)
        expected[list(best)] = v[list(best)]
        err = float(np.max(np.abs(out - expected)))
        worst = max(worst, err)
        ok = ok and err <= 1e-12
    checks.append(CheckResult("projection.weighted_vs_enumeration", ok, worst, 1e-12,
                              "40 random instances, random positive P"))

    from .projection import nm_projection
    ok = True
    worst = 0.0
    for i in range(30):
        groups = int(rng.integers(1, 6))
        m = int(rng.choice([4, 8]))
        n_keep = int(rng.integers(1, m))
        v = rng.standard_normal(groups * m)
        out = np.asarray(nm_projection(v, n_keep, m))
        for g in range(groups):
            seg = v[g * m:(g + 1) * m]
            seg_out = out[g * m:(g + 1) * m]
            best = _enum_best_support(seg * seg, n_keep)
            expected = np.zeros(m)
            expected[list(best)] = seg[list(best)]
            err = float(np.max(np.abs(seg_out - expected)))
            worst = max(worst, err)
            ok = ok and err <= 1e-12
        ok = ok and int(np.count_nonzero(out)) <= groups * n_keep
    checks.append(CheckResult("projection.nm_per_group", ok, worst, 1e-12,
                              "30 random instances, m in {4, 8}"))

    tie = np.asarray(proj(np.array([2.0, -2.0, 1.0]), 1))
    tie_ok = bool(tie[0] == 2.0 and tie[1] == 0.0 and tie[2] == 0.0)
    checks.append(CheckResult("projection.tie_break_lowest_index", tie_ok,
                              0.0 if tie_ok else 1.0, 0.0,
                              "|v| tie at indices 0 and 1 must keep index 0"))

    v = rng.standard_normal(64)
    ident = SaliencyDiagonal.identity(64)
    same = np.array_equal(np.asarray(p_weighted_projection(v, 16, ident)),
                          np.asarray(hard_threshold(v, 16)))
    checks.append(CheckResult("projection.identity_P_equals_hard", bool(same),
                              0.0 if same else 1.0, 0.0, "bit-exact"))
    return checks


def _fd_gradient(f: Callable[[FloatArray], float], x: FloatArray,
                 indices, h: float) -> FloatArray:
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        e = np.zeros_like(x)
        e[i] = h
        out[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


def _gradient_checks(seed: int) -> list:
    rng = np.random.default_rng(seed)
    checks = []

    problem = TestProblem.generate(n=10, d=4, seed=seed)
    oracle = problem.oracle
    x = rng.standard_normal(10)
    g = oracle.gradient(as_param_vector(x)).values
    fd = _fd_gradient(lambda v: oracle.value(as_param_vector(v)), x, range(10), 1e-6)
    err = float(np.max(np.abs(g - fd)) / (1.0 + np.max(np.abs(fd))))
    checks.append(CheckResult("gradients.quadratic_fd", err <= 1e-7, err, 1e-7))

    spec = MlpSpec(layer_sizes=(6, 5, 4), batch_norm=True)
    mlp = MlpOracle(spec)
    xm = mlp.init_params(seed)
    X = rng.standard_normal((16, 6))
    y = rng.integers(4, size=16)
    batch = (X, y)
    gm = mlp.gradient(xm, batch).values
    idx = rng.choice(mlp.dimension(), size=12, replace=False)
    fdm = _fd_gradient(lambda v: mlp.value(xm.with_values(v), batch),
                       xm.values, idx, 1e-6)
    errm = float(np.max(np.abs(gm[idx] - fdm) / (1.0 + np.abs(fdm))))
    checks.append(CheckResult("gradients.mlp_fd", errm <= 1e-5, errm, 1e-5,
                              "12 coordinates, batch-norm model"))

    g0 = sam_gradient(oracle, as_param_vector(x), 0.0)
    exact = np.array_equal(g0.values, oracle.gradient(as_param_vector(x)).values)
    checks.append(CheckResult("gradients.sam_rho0_bit_exact", bool(exact),
                              0.0 if exact else 1.0, 0.0))

    from .sharpness import epsilon_star
    g_at_x = oracle.gradient(as_param_vector(x)).values
    eps = epsilon_star(g_at_x, 0.05)
    norm_err = abs(float(np.linalg.norm(eps)) - 0.05)
    checks.append(CheckResult("gradients.epsilon_star_norm", norm_err <= 1e-12,
                              norm_err, 1e-12))
    g_sam = sam_gradient(oracle, as_param_vector(x), 0.05).values
    expected = oracle.gradient(as_param_vector(x + eps)).values
    err_sam = float(np.max(np.abs(g_sam - expected)))
    checks.append(CheckResult("gradients.sam_matches_frozen_perturbation",
                              err_sam == 0.0, err_sam, 0.0,
                              "same batch, perturbation recomputed outside"))

    v1, v2 = rng.standard_normal(10), rng.standard_normal(10)
    a, b = 1.7, -0.4
    lhs = hvp(oracle, x, a * v1 + b * v2).values
    rhs = a * hvp(oracle, x, v1).values + b * hvp(oracle, x, v2).values
    lin_err = float(np.max(np.abs(lhs - rhs)) / (1.0 + np.max(np.abs(rhs))))
    checks.append(CheckResult("gradients.hvp_linearity", lin_err <= 1e-6,
                              lin_err, 1e-6))

    analytic = problem.oracle.Q @ v1
    hv_err = float(np.max(np.abs(hvp(oracle, x, v1).values - analytic))
                   / (1.0 + np.max(np.abs(analytic))))
    checks.append(CheckResult("gradients.hvp_exact_on_quadratic", hv_err <= 1e-6,
                              hv_err, 1e-6))
    return checks


def convergence_run_config(problem: TestProblem, steps: int = 4000,
                           seed: int = 0) -> SafeConfig:
    """Schedules that provably settle on the quadratic family: constant
    lr below the stability bound, decaying SAM radius (summable against
    lr), and a penalty well above the smoothness constant.

    The penalty choice matters. At a fixed point the dual variable on a
    pruned coordinate equals gradient/penalty, and the projection keeps
    the support only while every kept magnitude exceeds every pruned
    dual magnitude. A small penalty lets pruned duals outgrow the kept
    values and the support churns forever; 4*beta leaves a wide margin
    on this family.
    """
    penalty_val = 4.0 * problem.beta
    lr = 1.0 / (problem.beta + penalty_val)
    return SafeConfig(steps=steps, target=problem.target,
                      lr=lr, rho=Schedule.power_law(0.05, 1.5),
                      penalty=penalty_val, dual_interval=8,
                      log_every=500, seed=seed)


def _convergence_checks(seed: int) -> list:
    checks = []
    worst_gap, worst_dist = 0.0, 0.0
    ok = True
    for s in range(3):
        problem = TestProblem.generate(n=8, d=3, seed=seed + s)
        cfg = convergence_run_config(problem, steps=4000, seed=seed + s)
        result = run_safe(problem.oracle, None, cfg)
        delta = max(2.0 * problem.beta, schedule_eval(cfg.penalty, cfg.steps, cfg.steps))
        gap = stationarity_gap(problem.oracle, result.x_sparse, delta, problem.target)
        dist = float(np.max(np.abs(result.x_dense.values - result.dual.z)))
        worst_gap, worst_dist = max(worst_gap, gap), max(worst_dist, dist)
        ok = ok and gap < 1e-6 and dist < 1e-6
        ok = ok and problem.oracle.value(result.x_sparse) >= problem.f_opt - 1e-9
    checks.append(CheckResult("convergence.stationarity_gap", ok and worst_gap < 1e-6,
                              worst_gap, 1e-6, "3 quadratic problems, 4000 steps"))
    checks.append(CheckResult("convergence.split_residual", worst_dist < 1e-6,
                              worst_dist, 1e-6, "max |x - z| at finish"))

    problem = TestProblem.generate(n=9, d=4, seed=seed + 17)
    penalty = 0.7
    H = problem.oracle.Q + penalty * np.eye(9)
    eigs = np.linalg.eigvalsh(H)
    smooth_err = abs(eigs[-1] - (problem.beta + penalty)) / (problem.beta + penalty)
    checks.append(CheckResult("convergence.penalized_smoothness", smooth_err <= 1e-9,
                              smooth_err, 1e-9,
                              "largest eigenvalue of Q + penalty*I"))
    strong_ok = bool(eigs[0] >= penalty - problem.mu - 1e-12)
    checks.append(CheckResult("convergence.penalized_strong_convexity", strong_ok,
                              float(eigs[0]), penalty - problem.mu,
                              "smallest eigenvalue >= penalty - mu"))

    beta = 2.0
    r1 = lemma_schedule_check(0.1, 0.1, beta)
    ok1 = (r1.lr_sum_diverges.status == "pass"
           and r1.lr_rho_sum_converges.status == "fail"
           and r1.rho_limsup_ok.status == "pass" and not r1.satisfied)
    checks.append(CheckResult("convergence.schedule_const_const", ok1,
                              0.0 if ok1 else 1.0, 0.0,
                              "constant/constant must fail the product sum"))
    r2 = lemma_schedule_check(Schedule.power_law(0.5, 1.0),
                              Schedule.power_law(0.4, 1.0), beta)
    ok2 = r2.satisfied
    checks.append(CheckResult("convergence.schedule_one_over_t", ok2,
                              0.0 if ok2 else 1.0, 0.0,
                              "1/t paired schedules satisfy all conditions"))

    from .safe_optimizer import corollary_delta_condition
    ok3 = corollary_delta_condition(2.0 * beta, beta) and \
        not corollary_delta_condition(beta, beta)
    checks.append(CheckResult("convergence.delta_condition", ok3,
                              0.0 if ok3 else 1.0, 0.0,
                              "2*beta satisfies, beta does not"))
    return checks


def verify_suite(scope: str = "all", seed: int = 0,
                 projection_fn: Optional[Callable] = None) -> VerifyReport:
    """Re-derive core numerics against independent oracles.

    Scopes: "projection" (enumeration cross-checks), "gradients"
    (finite differences, SAM identities, HVP algebra), "convergence"
    (quadratic-family runs, penalized-objective constants, schedule
    classifier), or "all". ``projection_fn`` substitutes the projection
    under test in the projection scope (a hook for negative controls).
    """
    scopes = ("projection", "gradients", "convergence", "all")
    if scope not in scopes:
        raise ConfigError(f"unknown verify scope {scope!r}; choose from {scopes}")
    checks = []
    if scope in ("projection", "all"):
        checks.extend(_projection_checks(seed, projection_fn))
    if scope in ("gradients", "all"):
        checks.extend(_gradient_checks(seed))
    if scope in ("convergence", "all"):
        checks.extend(_convergence_checks(seed))
    return VerifyReport(scope=scope, checks=checks)


# ---------------------------------------------------------------------------
# Report export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportPaths:
    out_dir: Path
    losses_csv: Path
    weights_csv: Path
    summary_md: Path


def _weight_histogram(values: FloatArray, n_bins: int = 40) -> list:
    """(lo, hi, count) rows over |w|: a zero bin then log-spaced bins.

    Counts sum to the vector length exactly.
    """
    mags = np.abs(values)
    top = float(mags.max())
    if top == 0.0:
        return [(0.0, 0.0, int(mags.size))]
    lo = 1e-8
    edges = np.concatenate([[0.0], np.logspace(np.log10(lo), np.log10(top), n_bins)])
    edges[-1] = np.nextafter(top, np.inf)  # include the max in the last bin
    counts, _ = np.histogram(mags, bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(len(counts))]


def export_report(run_dirs: Sequence[PathLike], out_dir: PathLike) -> ReportPaths:
    """Merge finished runs into CSVs and a markdown summary.

    Refuses to merge runs whose model/data sections differ (comparing
    accuracy across different problems is meaningless); seed directories
    without a summary.json are skipped with a warning.
    """
    run_dirs = [Path(p) for p in run_dirs]
    if not run_dirs:
        raise ValueError("no run directories given")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    loaded = []
    md_hash = None
    for rd in run_dirs:
        cfg_path = rd / "config.json"
        if not cfg_path.exists():
            raise ValueError(f"{rd}: missing config.json (not a run directory?)")
        config = ExperimentConfig.from_json_file(cfg_path)
        h = model_data_hash(config)
        if md_hash is None:
            md_hash = h
        elif h != md_hash:
            raise ValueError(
                f"{rd}: model/data differs from the first run directory; "
                "refusing to merge reports across different problems")
        seeds = []
        for seed_dir in sorted(rd.glob("seed_*")):
            spath = seed_dir / "summary.json"
            if not spath.exists():
                warnings.warn(f"{seed_dir}: no summary.json, skipping")
                continue
            with open(spath, "r", encoding="utf-8") as fh:
                seeds.append((seed_dir, json.load(fh)))
        loaded.append((config, seeds))

    losses_csv = out / "losses.csv"
    with open(losses_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "method", "seed", "step", "loss",
                         "dist_to_z", "dist_to_constraint"])
        for config, seeds in loaded:
            for seed_dir, summary in seeds:
                trace_path = seed_dir / "trace.jsonl"
                if not trace_path.exists():
                    continue
                from .serialization import read_trace_jsonl
                for rec in read_trace_jsonl(trace_path):
                    writer.writerow([config.name, config.method, summary["seed"],
                                     rec.get("step"), rec.get("loss"),
                                     rec.get("dist_to_z"),
                                     rec.get("dist_to_constraint")])

    weights_csv = out / "weights_hist.csv"
    with open(weights_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "method", "seed", "bin_lo", "bin_hi", "count"])
        for config, seeds in loaded:
            for seed_dir, summary in seeds:
                ck = seed_dir / "checkpoint_dense.bin"
                if not ck.exists():
                    continue
                x, _ = load_checkpoint(ck)
                for lo, hi, count in _weight_histogram(x.values):
                    writer.writerow([config.name, config.method, summary["seed"],
                                     repr(lo), repr(hi), count])

    summary_md = out / "summary.md"
    with open(summary_md, "w", encoding="utf-8") as fh:
        fh.write("# Run summary\n\n")
        fh.write("| run | method | target | seed | sparsity | final loss | metrics |\n")
        fh.write("|---|---|---|---|---|---|---|\n")
        for config, seeds in loaded:
            for _, s in seeds:
                if s.get("diverged"):
                    fh.write(f"| {config.name} | {config.method} | "
                             f"{s.get('target', '?')} | {s['seed']} | - | "
                             f"DIVERGED at step {s['snapshot']['step']} | |\n")
                    continue
                metrics = "; ".join(f"{k}={v:.4g}" for k, v in
                                    sorted(s.get("metrics", {}).items()))
                loss = s.get("final_loss")
                fh.write(f"| {config.name} | {config.method} | {s.get('target')} "
                         f"| {s['seed']} | {s.get('sparsity', 0):.4f} "
                         f"| {loss if loss is None else f'{loss:.6g}'} | {metrics} |\n")
        fh.write("\n")
        for config, seeds in loaded:
            agg_path = Path(config.out_dir) / config.name / "aggregate.json"
            alt = run_dirs[0].parent / config.name / "aggregate.json"
            for candidate in (agg_path, alt):
                if candidate.exists():
                    with open(candidate, "r", encoding="utf-8") as afh:
                        agg = json.load(afh)
                    fh.write(f"## {config.name} (mean over seeds)\n\n")
                    for key, val in sorted(agg.items()):
                        if isinstance(val, dict) and "mean" in val:
                            fh.write(f"- {key}: {val['mean']:.6g} "
                                     f"+/- {val['std']:.3g}\n")
                    fh.write("\n")
                    break
    return ReportPaths(out_dir=out, losses_csv=losses_csv, weights_csv=weights_csv,
                       summary_md=summary_md)


# ---------------------------------------------------------------------------
# Checkpoint diagnostics
# ---------------------------------------------------------------------------


def diagnose_checkpoint(config: ExperimentConfig, checkpoint: PathLike,
                        out_dir: PathLike, hessian: bool = True,
                        landscape_radius: float = 0.0, grid_points: int = 21,
                        stationarity_delta: Optional[float] = None,
                        batch_samples: int = 1000, seed: int = 0) -> dict:
    """Sharpness / landscape / stationarity measurements at a checkpoint.

    Uses a fixed seed-deterministic diagnostic batch (up to
    ``batch_samples`` training samples) so numbers are comparable across
    checkpoints of the same experiment.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, header = load_checkpoint(checkpoint)

    built = build_data(config.data)
    train = built[0] if built is not None else None
    oracle, problem = build_model(config.model,
                                  data_dim=None if train is None else train.dim,
                                  n_classes=None if train is None else train.n_classes)
    if x.n != oracle.dimension():
        raise ConfigError(f"checkpoint has {x.n} parameters, model expects "
                          f"{oracle.dimension()}")
    batch = None
    if train is not None:
        rng = np.random.default_rng(seed)
        take = rng.choice(train.n_samples,
                          size=min(batch_samples, train.n_samples), replace=False)
        batch = (train.inputs[take], train.labels[take])

    report: dict = {"checkpoint": str(checkpoint),
                    "config_hash": header.get("config_hash")}
    if hessian:
        eig = max_hessian_eigenvalue(oracle, x, iters=100, tol=1e-6,
                                     seed=seed, batch=batch)
        report["lambda_max"] = eig.value
        report["lambda_max_iterations"] = eig.iterations
        report["lambda_max_converged"] = eig.converged
    if landscape_radius > 0.0:
        from .sharpness import landscape_slice
        grid = landscape_slice(oracle, x, radius=landscape_radius,
                               grid_points=grid_points, axes=1, seed=seed,
                               batch=batch)
        grid.write_csv(out / "landscape.csv")
        report["landscape_csv"] = str(out / "landscape.csv")
        report["landscape_center_loss"] = grid.center_loss()
    if stationarity_delta is not None:
        target = _target_from_json(config.optim)
        report["stationarity_gap"] = stationarity_gap(oracle, x, stationarity_delta,
                                                      target, batch=batch)
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report
