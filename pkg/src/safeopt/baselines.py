"""Reference sparse-training baselines: one-shot magnitude, gradual
magnitude with SAM steps, and compression-aware descent.

These exist so the splitting optimizer has something fair to run against:
same oracles, same batch streams, same result container. Only the pruning
mechanics differ.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Optional, Union

import numpy as np

from .core import (DivergenceError, ObjectiveOracle, ParamVector, Schedule,
                   SparsityTarget, as_param_vector, as_schedule, schedule_eval,
                   sparsity_to_count)
from .projection import project_to_target
from .safe_optimizer import TRACE_SCHEMA_VERSION, EvalHook, TrainResult
from .sharpness import epsilon_star

PRUNE_SCHEDULE_KINDS = ("linear", "cubic")


@dataclass
class BaselineConfig:
    """Shared knobs for the baseline runners.

    ``prune_interval`` / ``prune_schedule`` drive the gradual-magnitude
    runner; ``rho`` is the SAM radius there and the (unnormalized)
    perturbation scale for compression-aware updates; ``plus`` adds the
    dense gradient to compression-aware steps; ``multi`` makes those steps
    redraw their target per step.
    """

    steps: int
    target: SparsityTarget
    lr: Union[Schedule, float] = 0.1
    rho: Union[Schedule, float] = 0.0
    prune_interval: int = 1000
    prune_schedule: str = "cubic"
    plus: bool = False
    multi: Optional[tuple[SparsityTarget, ...]] = None
    log_every: int = 50
    eval_every: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.prune_interval < 1:
            raise ValueError("prune_interval must be >= 1")
        if self.prune_schedule not in PRUNE_SCHEDULE_KINDS:
            raise ValueError(f"unknown prune schedule {self.prune_schedule!r}")
        self.lr = as_schedule(self.lr)
        self.rho = as_schedule(self.rho)
        if self.multi is not None:
            self.multi = tuple(self.multi)
            if len(self.multi) == 0:
                raise ValueError("multi target set must be nonempty")


def magnitude_prune_oneshot(x: ParamVector, target: SparsityTarget) -> ParamVector:
    """Zero everything but the largest-magnitude coordinates. No retraining."""
    return project_to_target(as_param_vector(x), target)


def sparsity_schedule(kind: str, t: int, total: int, s_final: float) -> float:
    """Scheduled sparsity fraction at prune step t of a total-step run.

    linear: s_final * t/total; cubic: s_final * (1 - (1 - t/total)^3).
    Both start at 0 and reach s_final exactly at t = total.
    """
    if kind not in PRUNE_SCHEDULE_KINDS:
        raise ValueError(f"unknown prune schedule {kind!r}")
    if total <= 0:
        raise ValueError("total must be positive")
    if t < 0 or t > total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if not (0.0 <= s_final < 1.0):
        raise ValueError(f"final sparsity {s_final} outside [0, 1)")
    frac = t / total
    if kind == "linear":
        return s_final * frac
    return s_final * (1.0 - (1.0 - frac) ** 3)


def _final_fraction(target: SparsityTarget, n_sparsifiable: int) -> float:
    if target.mode == "fraction":
        return float(target.value)
    return 1.0 - int(target.value) / n_sparsifiable


def _check_finite(values, t: int, loss: float, lr_t: float) -> None:
    if not np.isfinite(values).all():
        raise DivergenceError(
            f"non-finite iterate at step {t}",
            snapshot={"step": t, "loss": loss, "lr": lr_t,
                      "x_norm": float(np.linalg.norm(values[np.isfinite(values)]))})


def _baseline_record(oracle, x: ParamVector, batch, t: int, lr_t: float,
                     rho_t: float, target: SparsityTarget) -> dict:
    x_proj = project_to_target(x, target)
    return {
        "v": TRACE_SCHEMA_VERSION,
        "step": t,
        "loss": float(oracle.value(x, batch)),
        "lr": lr_t,
        "rho": rho_t,
        "penalty": 0.0,
        "dist_to_z": 0.0,
        "dist_to_constraint": float(np.linalg.norm(x.values - x_proj.values)),
    }


def _maybe_eval(record: dict, eval_hooks: Optional[Mapping[str, EvalHook]],
                config: BaselineConfig, t: int, x: ParamVector,
                x_sparse: ParamVector) -> None:
    if eval_hooks and config.eval_every is not None and t % config.eval_every == 0:
        for name, hook in eval_hooks.items():
            metrics = hook(t, x, x_sparse)
            record.update({f"{name}.{k}": float(v) for k, v in metrics.items()})


def run_imp_sam(oracle: ObjectiveOracle,
                data_stream: Optional[Iterable],
                config: BaselineConfig,
                x_init: Optional[ParamVector] = None,
                eval_hooks: Optional[Mapping[str, EvalHook]] = None) -> TrainResult:
    """Gradual magnitude pruning with sharpness-aware steps in between.

    Every ``prune_interval`` steps the iterate is magnitude-pruned to the
    scheduled sparsity and the surviving support becomes the trainable
    set: pruned coordinates are frozen at zero by masking every gradient
    (the SAM perturbation included). The learning-rate schedule keeps
    running through prune events. prune_interval > steps degenerates to
    plain SAM training plus a final one-shot prune.
    """
    x = oracle.init_params(config.seed) if x_init is None else as_param_vector(x_init)
    stream: Iterator = iter(data_stream) if data_stream is not None else itertools.repeat(None)
    mask = np.ones(x.n)  # float mask: 1 trainable, 0 frozen
    sp_mask = x.sparsifiable_mask()
    n_sp = x.sparsifiable_count()
    s_final = _final_fraction(config.target, n_sp)
    trace: list = []

    for t in range(config.steps):
        try:
            batch = next(stream)
        except StopIteration:
            raise ValueError(f"data stream exhausted at step {t}") from None

        lr_t = schedule_eval(config.lr, t, config.steps)
        rho_t = schedule_eval(config.rho, t, config.steps)

        pruned = False
        if (t + 1) % config.prune_interval == 0:
            s_t = sparsity_schedule(config.prune_schedule, t + 1, config.steps, s_final)
            d_t = sparsity_to_count(SparsityTarget.from_fraction(s_t), n_sp)
            x = project_to_target(x, SparsityTarget.from_count(d_t))
            mask = np.where(sp_mask & (x.values == 0.0), 0.0, 1.0)
            pruned = True

        if pruned or t % config.log_every == 0 or (
                config.eval_every is not None and t % config.eval_every == 0):
            record = _baseline_record(oracle, x, batch, t, lr_t, rho_t, config.target)
            _maybe_eval(record, eval_hooks, config, t, x,
                        project_to_target(x, config.target))
            trace.append(record)
            if not np.isfinite(record["loss"]):
                raise DivergenceError(f"non-finite loss at step {t}",
                                      snapshot={"step": t, "loss": record["loss"],
                                                "lr": lr_t, "rho": rho_t,
                                                "x_norm": float(np.linalg.norm(x.values))})

        g = oracle.gradient(x, batch).values * mask
        if rho_t > 0.0:
            eps = epsilon_star(g, rho_t)
            g = oracle.gradient(x.with_values(x.values + eps), batch).values * mask
        new_values = x.values - lr_t * g
        _check_finite(new_values, t, float("nan"), lr_t)
        x = x.with_values(new_values)

    x_sparse = magnitude_prune_oneshot(x, config.target)
    return TrainResult(x_dense=x, x_sparse=x_sparse, trace=trace)


def cram_update(oracle: ObjectiveOracle, x: ParamVector, rho: float, lr: float,
                target: SparsityTarget, plus: bool = False,
                batch: object = None) -> ParamVector:
    """One compression-aware descent step.

    Descends along the gradient taken at the *compressed* perturbed point
    C(x + rho * grad f(x)) -- note the perturbation is scaled by rho, not
    normalized -- so the iterate learns to survive magnitude pruning.
    ``plus`` adds the plain gradient at x, keeping the dense model strong
    as well. With rho = 0, a dense target, and plus off this is exactly a
    plain gradient step.
    """
    x = as_param_vector(x)
    g = oracle.gradient(x, batch).values
    perturbed = x.with_values(x.values + rho * g)
    compressed = project_to_target(perturbed, target)
    update = oracle.gradient(compressed, batch).values
    if plus:
        update = update + g
    return x.with_values(x.values - lr * update)


def run_cram(oracle: ObjectiveOracle,
             data_stream: Optional[Iterable],
             config: BaselineConfig,
             x_init: Optional[ParamVector] = None,
             eval_hooks: Optional[Mapping[str, EvalHook]] = None) -> TrainResult:
    """Train with compression-aware steps; returns dense and pruned models.

    The multi variant redraws the compression target uniformly from
    ``config.multi`` at every step; the final report still projects at
    ``config.target``.
    """
    x = oracle.init_params(config.seed) if x_init is None else as_param_vector(x_init)
    stream: Iterator = iter(data_stream) if data_stream is not None else itertools.repeat(None)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    trace: list = []

    for t in range(config.steps):
        try:
            batch = next(stream)
        except StopIteration:
            raise ValueError(f"data stream exhausted at step {t}") from None

        lr_t = schedule_eval(config.lr, t, config.steps)
        rho_t = schedule_eval(config.rho, t, config.steps)
        if config.multi is not None:
            target_t = config.multi[int(rng.integers(len(config.multi)))]
        else:
            target_t = config.target

        if t % config.log_every == 0 or (
                config.eval_every is not None and t % config.eval_every == 0):
            record = _baseline_record(oracle, x, batch, t, lr_t, rho_t, config.target)
            _maybe_eval(record, eval_hooks, config, t, x,
                        project_to_target(x, config.target))
            trace.append(record)
            if not np.isfinite(record["loss"]):
                raise DivergenceError(f"non-finite loss at step {t}",
                                      snapshot={"step": t, "loss": record["loss"],
                                                "lr": lr_t, "rho": rho_t,
                                                "x_norm": float(np.linalg.norm(x.values))})

        x_new = cram_update(oracle, x, rho_t, lr_t, target_t, config.plus, batch)
        _check_finite(x_new.values, t, float("nan"), lr_t)
        x = x_new

    x_sparse = project_to_target(x, config.target)
    return TrainResult(x_dense=x, x_sparse=x_sparse, trace=trace)
