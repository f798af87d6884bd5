"""Sparsity-constrained training by augmented-Lagrangian splitting.

The optimizer maintains three coupled objects: the dense iterate x driven
by gradient steps, a sparse reference z that always satisfies the sparsity
target exactly, and a scaled dual vector u accumulating the running
disagreement between them. Every ``dual_interval`` steps (including step
0, which initializes z from the starting point) the pair (z, u) refreshes:

    z <- project(x + u)          # hard, saliency-weighted, or n-of-m
    u <- u + x - z

Between refreshes x takes descent steps on the batch loss evaluated at an
adversarially perturbed point (the SAM inner maximization) plus a
quadratic penalty tying x to z - u:

    x_half <- x - lr * grad f(x + rho * grad f(x)/||grad f(x)||)
    x      <- x_half - lr * penalty * (x - z + u)

Setting rho = 0 recovers the plain splitting baseline; configuring a
saliency mode upgrades the projection metric (the "plus" family); the
``sg`` flag adds the gradient at the projected iterate to each step; and
``multi`` redraws the sparsity target from a set at every dual refresh
(and every sg gradient), which trains one dense model usable at several
sparsity levels.

The final result always reports both the dense iterate and its projection
under the run's configured target and saliency.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .core import (DivergenceError, FloatArray, ObjectiveOracle, ParamVector,
                   Schedule, SparsityTarget, as_param_vector, as_schedule,
                   schedule_eval)
from .projection import SaliencyDiagonal, build_saliency, project_to_target
from .sharpness import sam_gradient

SaliencyFn = Callable[[ParamVector, object], SaliencyDiagonal]
EvalHook = Callable[[int, ParamVector, ParamVector], Mapping[str, float]]

TRACE_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# State and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualState:
    """Sparse reference z, scaled dual u, and the step of the last refresh."""

    z: FloatArray
    u: FloatArray
    last_update_step: int = -1

    @classmethod
    def fresh(cls, n: int) -> "DualState":
        return cls(z=np.zeros(n), u=np.zeros(n), last_update_step=-1)


@dataclass
class SafeConfig:
    """Hyperparameters for :func:`run_safe`.

    Scalars given for lr / rho / penalty are promoted to constant
    schedules. ``saliency`` of None means plain magnitude projections;
    "identity" / "snip" / "obd" are built from the oracle at each dual
    refresh, "wanda" requires the caller to pass ``saliency_fn`` to
    run_safe (the optimizer has no activation matrix of its own).
    """

    steps: int
    target: SparsityTarget
    lr: Union[Schedule, float] = 0.1
    rho: Union[Schedule, float] = 0.0
    penalty: Union[Schedule, float] = 1e-2
    dual_interval: int = 32
    saliency: Optional[str] = None
    sg: bool = False
    multi: Optional[tuple[SparsityTarget, ...]] = None
    base: str = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    obd_probes: int = 8
    log_every: int = 50
    eval_every: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.dual_interval < 1:
            raise ValueError("dual_interval must be >= 1")
        if self.base not in ("sgd", "adam"):
            raise ValueError(f"unknown base step {self.base!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        self.lr = as_schedule(self.lr)
        self.rho = as_schedule(self.rho)
        self.penalty = as_schedule(self.penalty)
        if self.multi is not None:
            self.multi = tuple(self.multi)
            if len(self.multi) == 0:
                raise ValueError("multi target set must be nonempty")


@dataclass(frozen=True)
class TrainResult:
    """Outcome of a training run.

    ``x_sparse`` is exactly ``project(x_dense)`` under the configured
    target and the final saliency (recompute it to check). ``trace`` is a
    list of per-step records with strictly increasing ``step`` fields.
    """

    x_dense: ParamVector
    x_sparse: ParamVector
    trace: list
    dual: Optional[DualState] = None
    saliency: Optional[SaliencyDiagonal] = None


# ---------------------------------------------------------------------------
# Primitive updates
# ---------------------------------------------------------------------------


def dual_update(x: ParamVector, state: DualState, target: SparsityTarget,
                P: Optional[SaliencyDiagonal] = None,
                step: int = 0) -> DualState:
    """Refresh (z, u): project x + u, then ascend u by the new residual.

    z_new satisfies ``target`` exactly; on non-sparsifiable segments z
    copies x + u so those coordinates contribute nothing to the residual.
    """
    x = as_param_vector(x)
    v = x.with_values(x.values + state.u)
    z_new = project_to_target(v, target, P).values
    u_new = state.u + x.values - z_new
    return DualState(z=z_new, u=u_new, last_update_step=step)


def x_step(oracle: ObjectiveOracle, x: ParamVector, state: DualState,
           penalty_t: float, lr_t: float, rho_t: float, batch: object = None,
           sg_target: Optional[SparsityTarget] = None) -> ParamVector:
    """One plain-descent x update.

    Two substeps: first the SAM descent, then the penalty pull toward
    z - u, with the penalty evaluated at the pre-step x (not at x_half).
    With sg_target set, additionally subtracts lr * grad f at the
    magnitude projection of x, on the same batch.
    """
    x = as_param_vector(x)
    g_sam = sam_gradient(oracle, x, rho_t, batch).values
    x_half = x.values - lr_t * g_sam
    out = x_half - lr_t * penalty_t * (x.values - state.z + state.u)
    if sg_target is not None:
        x_proj = project_to_target(x, sg_target)
        out = out - lr_t * oracle.gradient(x_proj, batch).values
    return x.with_values(out)


def _assemble_gradient(oracle: ObjectiveOracle, x: ParamVector, state: DualState,
                       penalty_t: float, rho_t: float, batch: object,
                       sg_target: Optional[SparsityTarget]) -> FloatArray:
    """Total step direction for adaptive bases (same algebra as x_step)."""
    g = sam_gradient(oracle, x, rho_t, batch).values.copy()
    g += penalty_t * (x.values - state.z + state.u)
    if sg_target is not None:
        g += oracle.gradient(project_to_target(x, sg_target), batch).values
    return g


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


def run_safe(oracle: ObjectiveOracle,
             data_stream: Optional[Iterable],
             config: SafeConfig,
             x_init: Optional[ParamVector] = None,
             eval_hooks: Optional[Mapping[str, EvalHook]] = None,
             saliency_fn: Optional[SaliencyFn] = None) -> TrainResult:
    """Train for ``config.steps`` steps and return dense + projected results.

    ``data_stream`` yields one batch per step (None for full-batch
    objectives). The dual refresh fires whenever t mod dual_interval == 0,
    *before* that step's x update; the very first firing (t = 0) therefore
    initializes z from the starting point and leaves u = x_init - z.

    Raises :class:`DivergenceError` (with a snapshot of the failing step)
    the moment the loss or an iterate entry stops being finite.
    """
    if config.saliency == "wanda" and saliency_fn is None:
        raise ValueError("wanda saliency needs an explicit saliency_fn "
                         "(the optimizer has no activations)")

    x = oracle.init_params(config.seed) if x_init is None else as_param_vector(x_init)
    stream: Iterator = iter(data_stream) if data_stream is not None else itertools.repeat(None)
    state = DualState.fresh(x.n)
    multi_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))

    def draw_target() -> SparsityTarget:
        if config.multi is None:
            return config.target
        return config.multi[int(multi_rng.integers(len(config.multi)))]

    def build_P(xi: ParamVector, batch: object, when: int) -> Optional[SaliencyDiagonal]:
        if config.saliency is None:
            return None
        if saliency_fn is not None:
            return saliency_fn(xi, batch)
        return build_saliency(config.saliency, oracle=oracle, x=xi, batch=batch,
                              probes=config.obd_probes, seed=config.seed + when)

    trace: list = []
    last_P: Optional[SaliencyDiagonal] = None
    last_batch: object = None
    adam_m = np.zeros(x.n)
    adam_v = np.zeros(x.n)

    for t in range(config.steps):
        try:
            batch = next(stream)
        except StopIteration:
            raise ValueError(f"data stream exhausted at step {t}") from None
        last_batch = batch

        fired = False
        if t % config.dual_interval == 0:
            last_P = build_P(x, batch, t)
            state = dual_update(x, state, draw_target(), last_P, step=t)
            fired = True

        lr_t = schedule_eval(config.lr, t, config.steps)
        rho_t = schedule_eval(config.rho, t, config.steps)
        penalty_t = schedule_eval(config.penalty, t, config.steps)
        sg_target = draw_target() if (config.sg and config.multi is not None) \
            else (config.target if config.sg else None)

        if fired or t % config.log_every == 0 or (
                config.eval_every is not None and t % config.eval_every == 0):
            record = _trace_record(oracle, x, state, batch, t,
                                   lr_t, rho_t, penalty_t, config, last_P)
            if eval_hooks and config.eval_every is not None and t % config.eval_every == 0:
                x_sparse_now = project_to_target(x, config.target, last_P)
                for name, hook in eval_hooks.items():
                    metrics = hook(t, x, x_sparse_now)
                    record.update({f"{name}.{k}": float(v) for k, v in metrics.items()})
            trace.append(record)
            if not np.isfinite(record["loss"]):
                raise DivergenceError(
                    f"non-finite loss at step {t}",
                    snapshot={"step": t, "loss": record["loss"],
                              "x_norm": float(np.linalg.norm(x.values)),
                              "lr": lr_t, "rho": rho_t, "penalty": penalty_t})

        if config.base == "sgd":
            new_values = x_step(oracle, x, state, penalty_t, lr_t, rho_t,
                                batch, sg_target).values
        else:
            g = _assemble_gradient(oracle, x, state, penalty_t, rho_t, batch, sg_target)
            b1, b2 = config.adam_betas
            adam_m = b1 * adam_m + (1.0 - b1) * g
            adam_v = b2 * adam_v + (1.0 - b2) * g * g
            m_hat = adam_m / (1.0 - b1 ** (t + 1))
            v_hat = adam_v / (1.0 - b2 ** (t + 1))
            new_values = x.values - lr_t * m_hat / (np.sqrt(v_hat) + config.adam_eps)

        if not np.isfinite(new_values).all():
            raise DivergenceError(
                f"non-finite iterate at step {t}",
                snapshot={"step": t, "loss": float("nan"),
                          "x_norm": float(np.linalg.norm(x.values)),
                          "lr": lr_t, "rho": rho_t, "penalty": penalty_t})
        x = x.with_values(new_values)

    if config.saliency is not None and last_P is None:
        # degenerate zero-step run of a saliency-weighted config: build P
        # from the first batch so the final projection is still weighted
        last_P = build_P(x, next(stream, None) if last_batch is None else last_batch, 0)
    x_sparse = project_to_target(x, config.target, last_P)
    return TrainResult(x_dense=x, x_sparse=x_sparse, trace=trace,
                       dual=state, saliency=last_P)


def _trace_record(oracle, x: ParamVector, state: DualState, batch, t: int,
                  lr_t: float, rho_t: float, penalty_t: float,
                  config: SafeConfig, P: Optional[SaliencyDiagonal]) -> dict:
    x_proj = project_to_target(x, config.target, P)
    return {
        "v": TRACE_SCHEMA_VERSION,
        "step": t,
        "loss": float(oracle.value(x, batch)),
        "lr": lr_t,
        "rho": rho_t,
        "penalty": penalty_t,
        "dist_to_z": float(np.linalg.norm(x.values - state.z)),
        "dist_to_constraint": float(np.linalg.norm(x.values - x_proj.values)),
    }


def admm_config(config: SafeConfig) -> SafeConfig:
    """The rho = 0 baseline of the same run (identical in every other way)."""
    return replace(config, rho=Schedule.constant(0.0))


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def stationarity_gap(oracle: ObjectiveOracle, x: ParamVector, delta: float,
                     target: SparsityTarget, batch: object = None) -> float:
    """|| x - project(x - grad f(x)/delta) ||_2, the scaled fixed-point residual.

    Zero exactly when one projected-gradient step of length 1/delta leaves
    x unchanged. Projection is Euclidean (unweighted) and honors n-of-m
    patterns in the target.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    pv = as_param_vector(x)
    g = oracle.gradient(pv, batch).values
    stepped = pv.with_values(pv.values - g / delta)
    projected = project_to_target(stepped, target)
    return float(np.linalg.norm(pv.values - projected.values))


def corollary_delta_condition(delta: float, beta: float, mu: float = 0.0) -> bool:
    """Whether delta satisfies beta^2/delta - (delta - mu)/2 < 0."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return beta * beta / delta - (delta - mu) / 2.0 < 0.0


@dataclass(frozen=True)
class ConditionVerdict:
    status: str  # "pass" | "fail" | "unknown"
    detail: str


@dataclass(frozen=True)
class ScheduleCheckReport:
    """Verdicts for the three convergence conditions on (lr, rho) schedules.

    * ``lr_sum_diverges``   : sum_t lr_t = infinity
    * ``lr_rho_sum_converges``: sum_t lr_t * rho_t < infinity
    * ``rho_limsup_ok``     : limsup_t rho_t < 1/beta

    Constant and power-law schedules classify analytically (a constant c
    behaves like exponent 0, power-law like its exponent; a sum of
    t^-(p) diverges iff p <= 1). Horizon-bound kinds (linear, cosine)
    have no infinite-time behavior and report "unknown".
    """

    lr_sum_diverges: ConditionVerdict
    lr_rho_sum_converges: ConditionVerdict
    rho_limsup_ok: ConditionVerdict

    @property
    def satisfied(self) -> bool:
        return all(v.status == "pass" for v in
                   (self.lr_sum_diverges, self.lr_rho_sum_converges, self.rho_limsup_ok))


def _power_form(s: Schedule) -> Optional[tuple[float, float]]:
    """(coefficient, exponent) for schedules with a t^-p tail, else None."""
    if s.kind == "constant":
        return float(s.start), 0.0
    if s.kind == "power-law":
        return float(s.start), float(s.exponent)
    return None


def lemma_schedule_check(lr: Union[Schedule, float], rho: Union[Schedule, float],
                         beta: float) -> ScheduleCheckReport:
    """Classify (lr, rho) schedules against the three convergence conditions."""
    if beta <= 0:
        raise ValueError(f"smoothness beta must be positive, got {beta}")
    lr_s, rho_s = as_schedule(lr), as_schedule(rho)
    lr_form, rho_form = _power_form(lr_s), _power_form(rho_s)

    if lr_form is None:
        lr_sum = ConditionVerdict("unknown", f"no tail behavior for kind {lr_s.kind!r}")
    else:
        c, p = lr_form
        if c == 0.0:
            lr_sum = ConditionVerdict("fail", "lr identically zero, sum converges to 0")
        elif p <= 1.0:
            lr_sum = ConditionVerdict("pass", f"sum of {c:g} * t^-{p:g} diverges (exponent <= 1)")
        else:
            lr_sum = ConditionVerdict("fail", f"exponent {p:g} > 1, lr sum converges")

    if lr_form is None or rho_form is None:
        which = lr_s.kind if lr_form is None else rho_s.kind
        prod_sum = ConditionVerdict("unknown", f"no tail behavior for kind {which!r}")
    else:
        (c1, p1), (c2, p2) = lr_form, rho_form
        if c1 == 0.0 or c2 == 0.0:
            prod_sum = ConditionVerdict("pass", "product identically zero")
        elif p1 + p2 > 1.0:
            prod_sum = ConditionVerdict(
                "pass", f"combined exponent {p1 + p2:g} > 1, product sum converges")
        else:
            prod_sum = ConditionVerdict(
                "fail", f"combined exponent {p1 + p2:g} <= 1, product sum diverges")

    bound = 1.0 / beta
    if rho_form is None:
        limsup = ConditionVerdict("unknown", f"no tail behavior for kind {rho_s.kind!r}")
    else:
        c, p = rho_form
        tail = 0.0 if (p > 0.0 and c != 0.0) else c
        if tail < bound:
            limsup = ConditionVerdict("pass", f"limsup rho = {tail:g} < 1/beta = {bound:g}")
        else:
            limsup = ConditionVerdict("fail", f"limsup rho = {tail:g} >= 1/beta = {bound:g}")

    return ScheduleCheckReport(lr_sum_diverges=lr_sum,
                               lr_rho_sum_converges=prod_sum,
                               rho_limsup_ok=limsup)
