"""Shared vocabulary types for sparse-training experiments.

Everything downstream (projections, the splitting optimizer, baselines,
models) speaks in terms of four small types defined here:

* :class:`ParamVector` -- a flat float64 parameter vector plus a named
  segment layout, so model-aware code can find "layer0.weight" without
  carrying framework objects around.
* :class:`ObjectiveOracle` -- the minimal interface an objective must
  implement (value / gradient on a batch).
* :class:`Schedule` -- scalar hyperparameter schedules evaluated per step.
* :class:`SparsityTarget` -- how many coordinates survive a projection,
  as a count, a fraction, or an n-of-m structured pattern.

All numerics are float64 end to end; parameter vectors must stay finite.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]

SCHEDULE_KINDS = ("constant", "linear", "cosine-warmup", "cosine-decay", "power-law")


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """A contiguous named slice of a flat parameter vector.

    ``sparsifiable`` marks whether the segment's coordinates participate in
    sparsity projections; by convention weight matrices do and biases /
    normalization parameters do not, unless explicitly opted in.
    """

    name: str
    offset: int
    length: int
    sparsifiable: bool = True

    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


Layout = tuple[Segment, ...]


def single_segment_layout(n: int, name: str = "params", sparsifiable: bool = True) -> Layout:
    """Layout for a bare vector: one segment covering everything."""
    return (Segment(name=name, offset=0, length=int(n), sparsifiable=sparsifiable),)


def validate_layout(layout: Layout, n: int) -> None:
    """Check that segments tile [0, n) exactly, in order, without overlap."""
    pos = 0
    seen: set[str] = set()
    for seg in layout:
        if seg.name in seen:
            raise ValueError(f"duplicate segment name {seg.name!r}")
        seen.add(seg.name)
        if seg.offset != pos:
            raise ValueError(
                f"segment {seg.name!r} starts at {seg.offset}, expected {pos} "
                "(segments must tile the vector contiguously)"
            )
        if seg.length < 0:
            raise ValueError(f"segment {seg.name!r} has negative length")
        pos += seg.length
    if pos != n:
        raise ValueError(f"layout covers {pos} entries, vector has {n}")


def sparsifiable_mask(layout: Layout, n: int) -> FloatArray:
    """Boolean mask over the flat vector: True where projections may act."""
    mask = np.zeros(n, dtype=bool)
    for seg in layout:
        if seg.sparsifiable:
            mask[seg.slice()] = True
    return mask


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector with a named segment layout.

    Instances are immutable; produce updated vectors via :meth:`with_values`.
    Construction validates that the layout tiles the vector and that every
    entry is finite (NaN/inf anywhere is a hard error, not a warning).
    """

    values: FloatArray
    layout: Layout

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"parameter vector must be 1-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValueError(f"non-finite parameter entry at index {bad}")
        validate_layout(self.layout, values.shape[0])
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: Union[Sequence[float], FloatArray],
                    layout: Optional[Layout] = None) -> "ParamVector":
        arr = np.asarray(values, dtype=np.float64)
        if layout is None:
            layout = single_segment_layout(arr.shape[0])
        return cls(values=arr, layout=layout)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def with_values(self, values: Union[Sequence[float], FloatArray]) -> "ParamVector":
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self.values.shape:
            raise ValueError(f"shape mismatch: {arr.shape} vs {self.values.shape}")
        return ParamVector(values=arr, layout=self.layout)

    def segment(self, name: str) -> FloatArray:
        """Read-only view of one named segment."""
        for seg in self.layout:
            if seg.name == name:
                view = self.values[seg.slice()]
                view.flags.writeable = False
                return view
        raise KeyError(f"no segment named {name!r}")

    def segment_names(self) -> tuple[str, ...]:
        return tuple(seg.name for seg in self.layout)

    def sparsifiable_mask(self) -> FloatArray:
        return sparsifiable_mask(self.layout, self.n)

    def sparsifiable_count(self) -> int:
        return sum(seg.length for seg in self.layout if seg.sparsifiable)

    def nonzero_count(self, sparsifiable_only: bool = True) -> int:
        if sparsifiable_only:
            return int(np.count_nonzero(self.values[self.sparsifiable_mask()]))
        return int(np.count_nonzero(self.values))


def as_param_vector(x: Union[ParamVector, Sequence[float], FloatArray]) -> ParamVector:
    """Coerce an array-like into a ParamVector (single anonymous segment)."""
    if isinstance(x, ParamVector):
        return x
    return ParamVector.from_values(x)


# ---------------------------------------------------------------------------
# Objective interface
# ---------------------------------------------------------------------------


class ObjectiveOracle(abc.ABC):
    """Objective f(x; batch): scalar value and gradient, deterministic.

    ``batch`` is opaque to the optimizer; each oracle documents what it
    accepts (``None`` for full-batch objectives such as quadratics). Given
    the same (x, batch) an oracle must return identical results, so runs
    are reproducible from (config, seed) alone.
    """

    @abc.abstractmethod
    def dimension(self) -> int:
        raise NotImplementedError

    def layout(self) -> Layout:
        return single_segment_layout(self.dimension())

    @abc.abstractmethod
    def value(self, x: ParamVector, batch: object = None) -> float:
        raise NotImplementedError

    @abc.abstractmethod
    def gradient(self, x: ParamVector, batch: object = None) -> ParamVector:
        raise NotImplementedError

    def value_and_gradient(self, x: ParamVector, batch: object = None
                           ) -> tuple[float, ParamVector]:
        """Override when value and gradient share forward work."""
        return self.value(x, batch), self.gradient(x, batch)

    def init_params(self, seed: int = 0) -> ParamVector:
        """Default start point: standard normal draw; oracles may override."""
        rng = np.random.default_rng(seed)
        return ParamVector(values=rng.standard_normal(self.dimension()),
                           layout=self.layout())


class QuadraticOracle(ObjectiveOracle):
    """f(x) = 0.5 (x - c)^T Q (x - c) for symmetric PSD Q. Ignores batch.

    The workhorse test objective: gradients, Hessian products and the
    smoothness constant are all available in closed form.
    """

    def __init__(self, Q: FloatArray, center: Optional[FloatArray] = None):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        self.Q = Q
        self.center = (np.zeros(Q.shape[0]) if center is None
                       else np.asarray(center, dtype=np.float64))
        if self.center.shape != (Q.shape[0],):
            raise ValueError("center shape mismatch")

    def dimension(self) -> int:
        return self.Q.shape[0]

    def value(self, x: ParamVector, batch: object = None) -> float:
        d = as_param_vector(x).values - self.center
        return float(0.5 * d @ (self.Q @ d))

    def gradient(self, x: ParamVector, batch: object = None) -> ParamVector:
        pv = as_param_vector(x)
        return pv.with_values(self.Q @ (pv.values - self.center))

    def smoothness(self) -> float:
        """beta = largest eigenvalue of Q."""
        return float(np.linalg.eigvalsh(self.Q)[-1])


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Scalar schedule s(t) over a horizon of T steps.

    Kinds and their formulas (t in [0, T]):

    * ``constant``     : start
    * ``linear``       : start + (end - start) * t/T
    * ``cosine-warmup``: end * (1 - cos(pi t/T)) / 2   (rises 0 -> end)
    * ``cosine-decay`` : end + (start - end) * (1 + cos(pi t/T)) / 2
    * ``power-law``    : start * max(t, 1)^(-exponent)

    Endpoints are exact: s(0) == start and, for the bounded kinds,
    s(T) == end bit-for-bit.
    """

    kind: str
    start: float = 0.0
    end: Optional[float] = None
    exponent: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant":
            if self.end is not None and self.end != self.start:
                raise ValueError("constant schedule requires end == start")
            object.__setattr__(self, "end", self.start)
        elif self.kind == "cosine-warmup":
            if self.start != 0.0:
                raise ValueError("cosine-warmup starts at zero by definition")
            if self.end is None:
                raise ValueError("cosine-warmup requires end")
        elif self.kind in ("linear", "cosine-decay"):
            if self.end is None:
                raise ValueError(f"{self.kind} schedule requires end")
        elif self.kind == "power-law":
            if self.exponent is None or self.exponent < 0:
                raise ValueError("power-law requires exponent >= 0")

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls(kind="constant", start=value)

    @classmethod
    def linear(cls, start: float, end: float) -> "Schedule":
        return cls(kind="linear", start=start, end=end)

    @classmethod
    def cosine_warmup(cls, end: float) -> "Schedule":
        return cls(kind="cosine-warmup", start=0.0, end=end)

    @classmethod
    def cosine_decay(cls, start: float, end: float) -> "Schedule":
        return cls(kind="cosine-decay", start=start, end=end)

    @classmethod
    def power_law(cls, start: float, exponent: float) -> "Schedule":
        return cls(kind="power-law", start=start, exponent=exponent)


def schedule_eval(sched: Schedule, t: int, horizon: int) -> float:
    """Evaluate ``sched`` at integer step t of a horizon-step run."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if t < 0 or t > horizon:
        raise ValueError(f"step {t} outside [0, {horizon}]")
    if sched.kind == "power-law":
        return sched.start * float(max(t, 1)) ** (-float(sched.exponent))
    if t == 0:
        return sched.start
    if t == horizon:
        return float(sched.end)  # exact endpoint for the bounded kinds
    frac = t / horizon
    if sched.kind == "constant":
        return sched.start
    if sched.kind == "linear":
        return sched.start + (sched.end - sched.start) * frac
    if sched.kind == "cosine-warmup":
        return sched.end * (1.0 - math.cos(math.pi * frac)) / 2.0
    if sched.kind == "cosine-decay":
        return sched.end + (sched.start - sched.end) * (1.0 + math.cos(math.pi * frac)) / 2.0
    raise AssertionError(f"unhandled kind {sched.kind!r}")


def as_schedule(value: Union[Schedule, float, int]) -> Schedule:
    """Floats become constant schedules; Schedules pass through."""
    if isinstance(value, Schedule):
        return value
    return Schedule.constant(float(value))


# ---------------------------------------------------------------------------
# Sparsity targets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparsityTarget:
    """How many coordinates a projection keeps.

    ``mode`` is "count" (value = kept coordinates d) or "fraction"
    (value = zeroed fraction s, kept count d = round(n (1 - s)), half up).
    ``pattern`` is None for unstructured sparsity or (n_keep, m) to keep
    n_keep of every m consecutive coordinates; with a pattern the kept
    count is implied by the pattern and must agree with mode/value.
    """

    mode: str
    value: float
    pattern: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.mode not in ("count", "fraction"):
            raise ValueError(f"unknown sparsity mode {self.mode!r}")
        if self.mode == "count":
            if self.value < 1 or self.value != int(self.value):
                raise ValueError("count target must be a positive integer")
        else:
            if not (0.0 <= self.value < 1.0):
                raise ValueError("fraction target must lie in [0, 1)")
        if self.pattern is not None:
            n_keep, m = self.pattern
            if not (isinstance(n_keep, int) and isinstance(m, int)):
                raise ValueError("pattern entries must be integers")
            if not (1 <= n_keep <= m):
                raise ValueError(f"pattern {self.pattern} needs 1 <= n_keep <= m")
            if self.mode == "fraction":
                implied = 1.0 - n_keep / m
                if abs(self.value - implied) > 1e-9:
                    raise ValueError(
                        f"fraction {self.value} conflicts with pattern "
                        f"{n_keep}:{m} (implies {implied})")

    @classmethod
    def from_count(cls, d: int) -> "SparsityTarget":
        return cls(mode="count", value=float(d))

    @classmethod
    def from_fraction(cls, s: float) -> "SparsityTarget":
        return cls(mode="fraction", value=float(s))

    @classmethod
    def n_of_m(cls, n_keep: int, m: int) -> "SparsityTarget":
        return cls(mode="fraction", value=1.0 - n_keep / m, pattern=(n_keep, m))

    def describe(self) -> str:
        if self.pattern is not None:
            return f"{self.pattern[0]}:{self.pattern[1]}"
        if self.mode == "count":
            return f"keep-{int(self.value)}"
        return f"sparsity-{self.value:g}"


def sparsity_to_count(target: SparsityTarget, n: int) -> int:
    """Kept-coordinate count for a vector with n sparsifiable entries.

    Fractions round half up and the result is clamped to [1, n]; count
    targets must already lie in that range. For n-of-m patterns m must
    divide n and the count is n/m * n_keep (consistency with an explicit
    count value is enforced).
    """
    if n < 1:
        raise ValueError(f"need at least one sparsifiable entry, got {n}")
    if target.pattern is not None:
        n_keep, m = target.pattern
        if n % m != 0:
            raise ValueError(f"group size {m} must divide vector length {n}")
        d = (n // m) * n_keep
        if target.mode == "count" and int(target.value) != d:
            raise ValueError(
                f"count {int(target.value)} conflicts with pattern "
                f"{n_keep}:{m} on length {n} (implies {d})")
        return d
    if target.mode == "count":
        d = int(target.value)
        if d > n:
            raise ValueError(f"count target {d} exceeds vector length {n}")
        return d
    # round half up, then clamp so at least one coordinate survives
    d = int(math.floor(n * (1.0 - target.value) + 0.5))
    return max(1, min(n, d))


# ---------------------------------------------------------------------------
# Misc shared pieces
# ---------------------------------------------------------------------------


class DivergenceError(RuntimeError):
    """Raised when a training loss stops being finite.

    Carries a ``snapshot`` dict (step, loss, iterate norm, hyperparameters
    at the failing step) so harness code can persist a diagnostic record.
    """

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = dict(snapshot)


EvalHook = Callable[[int, ParamVector, ParamVector], dict]
