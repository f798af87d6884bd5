"""L0 projections: plain, saliency-weighted, and n-of-m structured.

The central operation is the weighted projection

    argmin_{||z||_0 <= d} (z - v)^T P (z - v),  P diagonal positive,

whose solution keeps the d coordinates with the largest scores P_ii v_i^2
and zeroes the rest. With P = identity this is exact magnitude (hard)
thresholding; other diagonals reproduce classic pruning saliencies:

* ``snip``  -- P_ii = g_i^2, squared gradient entries,
* ``obd``   -- P_ii = Hessian diagonal (finite-difference estimate),
* ``wanda`` -- P_ii = squared column norm of the activations feeding
  the weight's input feature.

Selection runs in O(n) (partition, not a full sort) and breaks score ties
deterministically toward the lowest index. When the input carries a
segment layout, only coordinates in segments flagged sparsifiable
participate; everything else passes through untouched and does not count
toward d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import FloatArray, ParamVector, SparsityTarget, as_param_vector, sparsity_to_count

SALIENCY_FLOOR = 1e-12
SALIENCY_MODES = ("identity", "obd", "snip", "wanda")

VectorLike = Union[ParamVector, FloatArray, list]


@dataclass(frozen=True)
class SaliencyDiagonal:
    """Diagonal weighting P for the projection metric.

    Entries are clamped below by ``floor`` at construction so every
    coordinate retains a strictly positive weight (a zero weight would
    make the projection indifferent to that coordinate's value).
    """

    entries: FloatArray
    mode: str
    floor: float = SALIENCY_FLOOR

    def __post_init__(self) -> None:
        ent = np.asarray(self.entries, dtype=np.float64)
        if ent.ndim != 1:
            raise ValueError("saliency entries must be 1-D")
        if not np.isfinite(ent).all():
            raise ValueError("saliency entries must be finite")
        object.__setattr__(self, "entries", np.maximum(ent, self.floor))

    @classmethod
    def identity(cls, n: int) -> "SaliencyDiagonal":
        return cls(entries=np.ones(n), mode="identity")

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])


def _topk_indices(scores: FloatArray, d: int) -> FloatArray:
    """Indices of the d largest scores; ties resolved toward lower indices.

    Partition-based (O(n)): find the d-th largest value, take everything
    strictly above it, then fill remaining slots with the lowest-index
    entries equal to it.
    """
    n = scores.shape[0]
    if d >= n:
        return np.arange(n)
    tau = np.partition(scores, n - d)[n - d]
    keep = np.flatnonzero(scores > tau)
    need = d - keep.shape[0]
    if need > 0:
        tied = np.flatnonzero(scores == tau)[:need]
        keep = np.concatenate([keep, tied])
    return np.sort(keep)


def _select_values(values: FloatArray, scores: FloatArray, d: int) -> FloatArray:
    out = np.zeros_like(values)
    keep = _topk_indices(scores, d)
    out[keep] = values[keep]
    return out


def _nm_select_values(values: FloatArray, scores: FloatArray,
                      n_keep: int, m: int) -> FloatArray:
    if values.shape[0] % m != 0:
        raise ValueError(f"group size {m} must divide length {values.shape[0]}")
    groups = scores.reshape(-1, m)
    # stable sort on negated scores: equal scores stay in index order,
    # so ties go to the lowest in-group index
    order = np.argsort(-groups, axis=1, kind="stable")[:, :n_keep]
    mask = np.zeros_like(groups, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return np.where(mask.reshape(values.shape), values, 0.0)


def _project_masked(v: VectorLike, kernel) -> VectorLike:
    """Run a projection kernel on the sparsifiable coordinates only."""
    pv = as_param_vector(v)
    mask = pv.sparsifiable_mask()
    if mask.all():
        result = kernel(pv.values, slice(None))
    else:
        out = pv.values.copy()
        out[mask] = kernel(pv.values[mask], mask)
        result = out
    if isinstance(v, ParamVector):
        return pv.with_values(result)
    return np.asarray(result, dtype=np.float64)


def _check_d(d: int, n: int) -> int:
    d = int(d)
    if not (1 <= d <= n):
        raise ValueError(f"kept count d={d} outside [1, {n}]")
    return d


def hard_threshold(v: VectorLike, d: int) -> VectorLike:
    """Keep the d largest-magnitude coordinates of v, zero the rest.

    Exactly the Euclidean projection onto {z : ||z||_0 <= d}. Ties in
    magnitude keep the lowest index. d = n returns v unchanged.
    """
    pv = as_param_vector(v)
    n_sp = pv.sparsifiable_count()
    d = _check_d(d, n_sp)

    def kernel(vals: FloatArray, _mask) -> FloatArray:
        return _select_values(vals, vals * vals, d)

    return _project_masked(v, kernel)


def p_weighted_projection(v: VectorLike, d: int, P: SaliencyDiagonal) -> VectorLike:
    """Projection in the P-weighted metric: keep top-d by P_ii * v_i^2.

    P must cover the full vector (len(P) == len(v)); on layouts with
    non-sparsifiable segments only the sparsifiable entries of P are
    consulted. Kept coordinates retain their input values: the minimizer
    over a fixed support copies v there and zeroes the complement.
    """
    pv = as_param_vector(v)
    if P.n != pv.n:
        raise ValueError(f"saliency length {P.n} != vector length {pv.n}")
    n_sp = pv.sparsifiable_count()
    d = _check_d(d, n_sp)

    def kernel(vals: FloatArray, mask) -> FloatArray:
        weights = P.entries[mask]
        return _select_values(vals, weights * vals * vals, d)

    return _project_masked(v, kernel)


def nm_projection(v: VectorLike, n_keep: int, m: int,
                  P: Optional[SaliencyDiagonal] = None) -> VectorLike:
    """Keep n_keep of every m consecutive coordinates (per group, top
    scores P_ii v_i^2, identity P by default).

    m must divide the length of every sparsifiable segment. Grouping is
    positional within the concatenated sparsifiable coordinates, so
    callers choose the semantics by choosing the flattening order.
    """
    pv = as_param_vector(v)
    if not (1 <= n_keep <= m):
        raise ValueError(f"need 1 <= n_keep <= m, got {n_keep}:{m}")
    if P is not None and P.n != pv.n:
        raise ValueError(f"saliency length {P.n} != vector length {pv.n}")
    for seg in pv.layout:
        if seg.sparsifiable and seg.length % m != 0:
            raise ValueError(
                f"group size {m} does not divide segment {seg.name!r} "
                f"of length {seg.length}")

    def kernel(vals: FloatArray, mask) -> FloatArray:
        weights = np.ones_like(vals) if P is None else P.entries[mask]
        return _nm_select_values(vals, weights * vals * vals, n_keep, m)

    return _project_masked(v, kernel)


def project_to_target(v: VectorLike, target: SparsityTarget,
                      P: Optional[SaliencyDiagonal] = None) -> VectorLike:
    """Dispatch on the target: n-of-m pattern, else top-d (weighted if P)."""
    if target.pattern is not None:
        n_keep, m = target.pattern
        return nm_projection(v, n_keep, m, P)
    pv = as_param_vector(v)
    d = sparsity_to_count(target, pv.sparsifiable_count())
    if P is None:
        return hard_threshold(v, d)
    return p_weighted_projection(v, d, P)


def build_saliency(mode: str,
                   oracle=None,
                   x: Optional[VectorLike] = None,
                   batch: object = None,
                   activations=None,
                   probes: int = 8,
                   seed: int = 0,
                   floor: float = SALIENCY_FLOOR) -> SaliencyDiagonal:
    """Construct the diagonal P for a saliency mode.

    * ``identity`` -- all ones (needs only x or an oracle for the length).
    * ``snip``     -- squared gradient at x on the given batch.
    * ``obd``      -- Hessian diagonal estimated from ``probes`` Rademacher
      probe vectors r via r * (H r), each H r a central-difference
      Hessian-vector product; exact for diagonal quadratics. Negative
      estimates clamp to the floor.
    * ``wanda``    -- squared column norms of the activation matrix, tiled
      across output units; expects x = vec(W^T) with W of shape
      d_in x d_out and activations of shape n_samples x d_in.

    ``activations`` may be a bare matrix or any object with a ``matrix``
    attribute.
    """
    if mode not in SALIENCY_MODES:
        raise ValueError(f"unknown saliency mode {mode!r}")

    if mode == "identity":
        if x is not None:
            n = as_param_vector(x).n
        elif oracle is not None:
            n = oracle.dimension()
        else:
            raise ValueError("identity saliency needs x or oracle for the length")
        return SaliencyDiagonal(entries=np.ones(n), mode=mode, floor=floor)

    if mode == "snip":
        if oracle is None or x is None:
            raise ValueError("snip saliency needs oracle and x")
        g = oracle.gradient(as_param_vector(x), batch).values
        return SaliencyDiagonal(entries=g * g, mode=mode, floor=floor)

    if mode == "obd":
        if oracle is None or x is None:
            raise ValueError("obd saliency needs oracle and x")
        from .sharpness import hvp  # local import keeps module deps one-way

        pv = as_param_vector(x)
        rng = np.random.default_rng(seed)
        acc = np.zeros(pv.n)
        for _ in range(max(1, int(probes))):
            r = rng.choice([-1.0, 1.0], size=pv.n)
            acc += r * hvp(oracle, pv, r, batch=batch).values
        diag = acc / max(1, int(probes))
        return SaliencyDiagonal(entries=diag, mode=mode, floor=floor)

    # wanda
    if x is None or activations is None:
        raise ValueError("wanda saliency needs x and activations")
    A = getattr(activations, "matrix", activations)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("activations must be a 2-D matrix")
    n = as_param_vector(x).n
    d_in = A.shape[1]
    if n % d_in != 0:
        raise ValueError(
            f"vector length {n} is not a multiple of activation width {d_in}")
    col_energy = np.einsum("ij,ij->j", A, A)  # squared column norms
    return SaliencyDiagonal(entries=np.tile(col_energy, n // d_in),
                            mode="wanda", floor=floor)
