"""Sharpness machinery: SAM ascent direction, Hessian probes, landscapes.

Everything here treats the objective as a black box reachable only through
value/gradient calls, so it works identically for closed-form quadratics
and backprop models:

* :func:`epsilon_star` / :func:`sam_gradient` -- the norm-constrained
  inner ascent step and the gradient evaluated at the perturbed point.
* :func:`hvp` -- matrix-free Hessian-vector products by central finite
  differences of the gradient (exact for quadratics up to rounding).
* :func:`max_hessian_eigenvalue` -- power iteration on the HVP operator,
  with a shifted second pass so the *algebraically* largest eigenvalue is
  returned even when the dominant one is negative.
* :func:`landscape_slice` -- 1-D/2-D loss surface slices along random
  segment-normalized directions, serializable to CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import FloatArray, ObjectiveOracle, ParamVector, as_param_vector

ZERO_GRAD_GUARD = 1e-16

VectorLike = Union[ParamVector, FloatArray, list]


def epsilon_star(gradient: VectorLike, rho: float) -> VectorLike:
    """Worst-case ascent perturbation of radius rho: rho * g / ||g||_2.

    A gradient with norm at or below the zero guard (1e-16) yields the
    zero perturbation rather than a division blow-up.
    """
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    pv = as_param_vector(gradient)
    nrm = float(np.linalg.norm(pv.values))
    if rho == 0.0 or nrm <= ZERO_GRAD_GUARD:
        out = np.zeros_like(pv.values)
    else:
        out = (rho / nrm) * pv.values
    if isinstance(gradient, ParamVector):
        return pv.with_values(out)
    return out


def sam_gradient(oracle: ObjectiveOracle, x: VectorLike, rho: float,
                 batch: object = None) -> ParamVector:
    """Gradient at the adversarially perturbed point x + epsilon*(x).

    Both gradient evaluations use the same batch. rho = 0 returns the
    plain gradient object untouched (bit-exact, no added zeros).
    """
    pv = as_param_vector(x)
    grad = oracle.gradient(pv, batch)
    if rho == 0.0:
        return grad
    eps = epsilon_star(grad, rho)
    return oracle.gradient(pv.with_values(pv.values + eps.values), batch)


def hvp(oracle: ObjectiveOracle, x: VectorLike, v: VectorLike,
        h: Optional[float] = None, batch: object = None) -> ParamVector:
    """Hessian-vector product H(x) v by central differences.

    Uses the normalized direction so the stencil width is independent of
    ||v||: (g(x + h v_hat) - g(x - h v_hat)) * ||v|| / (2 h), with
    h = 1e-4 * (1 + ||x||_inf) by default. The zero vector maps to zero.
    """
    pv = as_param_vector(x)
    vv = np.asarray(getattr(v, "values", v), dtype=np.float64)
    if vv.shape != pv.values.shape:
        raise ValueError(f"direction shape {vv.shape} != parameter shape {pv.values.shape}")
    vnorm = float(np.linalg.norm(vv))
    if vnorm == 0.0:
        return pv.with_values(np.zeros_like(pv.values))
    if h is None:
        h = 1e-4 * (1.0 + float(np.max(np.abs(pv.values))))
    if h <= 0:
        raise ValueError(f"stencil width must be positive, got {h}")
    unit = vv / vnorm
    g_plus = oracle.gradient(pv.with_values(pv.values + h * unit), batch).values
    g_minus = oracle.gradient(pv.with_values(pv.values - h * unit), batch).values
    return pv.with_values((g_plus - g_minus) * (vnorm / (2.0 * h)))


@dataclass(frozen=True)
class PowerIterationResult:
    value: float
    iterations: int
    converged: bool


def _power_iteration(apply_H, n: int, iters: int, tol: float,
                     rng: np.random.Generator) -> PowerIterationResult:
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam_prev: Optional[float] = None
    lam = 0.0
    for k in range(1, iters + 1):
        Hv = apply_H(v)
        lam = float(v @ Hv)
        nrm = float(np.linalg.norm(Hv))
        if nrm <= ZERO_GRAD_GUARD:
            # v is (numerically) in the null space: eigenvalue 0
            return PowerIterationResult(value=0.0, iterations=k, converged=True)
        v = Hv / nrm
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            return PowerIterationResult(value=lam, iterations=k, converged=True)
        lam_prev = lam
    return PowerIterationResult(value=lam, iterations=iters, converged=False)


def max_hessian_eigenvalue(oracle: ObjectiveOracle, x: VectorLike,
                           iters: int = 100, tol: float = 1e-6,
                           seed: int = 0, batch: object = None,
                           h: Optional[float] = None) -> PowerIterationResult:
    """Largest Hessian eigenvalue at x via matrix-free power iteration.

    Convergence is declared when the Rayleigh quotient changes by less
    than tol (relative). Power iteration finds the largest-*magnitude*
    eigenvalue; if that comes back negative a second pass runs on the
    shifted operator H - lam1 I, whose dominant eigenvalue recovers the
    algebraic maximum. Iteration counts accumulate across passes.
    """
    pv = as_param_vector(x)
    n = pv.n
    rng = np.random.default_rng(seed)

    def apply_H(v: FloatArray) -> FloatArray:
        return hvp(oracle, pv, v, h=h, batch=batch).values

    first = _power_iteration(apply_H, n, iters, tol, rng)
    if first.value >= 0.0:
        return first
    shift = first.value

    def apply_shifted(v: FloatArray) -> FloatArray:
        return apply_H(v) - shift * v

    second = _power_iteration(apply_shifted, n, iters, tol, rng)
    return PowerIterationResult(value=second.value + shift,
                                iterations=first.iterations + second.iterations,
                                converged=first.converged and second.converged)


# ---------------------------------------------------------------------------
# Loss landscape slices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LandscapeGrid:
    """Loss values on a symmetric offset grid around a center point.

    ``losses`` is 1-D for a single axis and 2-D (axis-major) for two.
    The center cell is evaluated at exactly zero offset, so it equals the
    unperturbed loss bit-for-bit.
    """

    offsets: FloatArray
    losses: FloatArray
    axes: int

    def center_loss(self) -> float:
        mid = self.offsets.shape[0] // 2
        if self.axes == 1:
            return float(self.losses[mid])
        return float(self.losses[mid, mid])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.axes == 1:
                writer.writerow(["offset", "loss"])
                for off, loss in zip(self.offsets, self.losses):
                    writer.writerow([repr(float(off)), repr(float(loss))])
            else:
                writer.writerow(["offset_axis1", "offset_axis2", "loss"])
                for i, oi in enumerate(self.offsets):
                    for j, oj in enumerate(self.offsets):
                        writer.writerow([repr(float(oi)), repr(float(oj)),
                                         repr(float(self.losses[i, j]))])


def _segment_normalized_direction(pv: ParamVector, rng: np.random.Generator) -> FloatArray:
    """Random direction rescaled per segment to match the center's norms.

    Each layout segment of the direction is scaled to the norm of the
    corresponding segment of x, so segments with large parameters get
    proportionally large perturbations and dead (all-zero) segments stay
    unperturbed.
    """
    direction = rng.standard_normal(pv.n)
    for seg in pv.layout:
        sl = seg.slice()
        d_norm = float(np.linalg.norm(direction[sl]))
        x_norm = float(np.linalg.norm(pv.values[sl]))
        if d_norm <= ZERO_GRAD_GUARD:
            continue
        direction[sl] *= x_norm / d_norm
    return direction


def landscape_slice(oracle: ObjectiveOracle, x: VectorLike,
                    radius: float, grid_points: int = 21, axes: int = 1,
                    seed: int = 0, batch: object = None) -> LandscapeGrid:
    """Sample the loss on a line (axes=1) or plane (axes=2) through x.

    grid_points must be odd so the exact center is a grid cell. All
    evaluations reuse the same fixed batch. radius = 0 degenerates to a
    constant grid equal to f(x).
    """
    if axes not in (1, 2):
        raise ValueError(f"axes must be 1 or 2, got {axes}")
    if grid_points < 1 or grid_points % 2 == 0:
        raise ValueError(f"grid_points must be odd and positive, got {grid_points}")
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")

    pv = as_param_vector(x)
    rng = np.random.default_rng(seed)
    dirs = [_segment_normalized_direction(pv, rng) for _ in range(axes)]

    offsets = np.linspace(-radius, radius, grid_points)
    offsets[grid_points // 2] = 0.0  # exact center regardless of rounding

    if axes == 1:
        losses = np.empty(grid_points)
        for i, off in enumerate(offsets):
            losses[i] = oracle.value(pv.with_values(pv.values + off * dirs[0]), batch)
    else:
        losses = np.empty((grid_points, grid_points))
        for i, oi in enumerate(offsets):
            base = pv.values + oi * dirs[0]
            for j, oj in enumerate(offsets):
                losses[i, j] = oracle.value(pv.with_values(base + oj * dirs[1]), batch)
    return LandscapeGrid(offsets=offsets, losses=losses, axes=axes)
