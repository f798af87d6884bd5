"""Sparse projections: plain magnitude, saliency-weighted, and n-of-m."""

import numpy as np

from safeopt import (ParamVector, SaliencyDiagonal, Segment, SparsityTarget,
                     hard_threshold, nm_projection, p_weighted_projection,
                     project_to_target, single_segment_layout)

v = ParamVector(np.array([3.0, -1.0, 2.0, 0.4, -2.5, 0.9]),
                single_segment_layout(6))

print("input:", v.values)
print("keep 3 by magnitude:", hard_threshold(v, 3).values)

# a saliency metric can overrule raw magnitude: the second coordinate is
# small but expensive to remove, the first is large but cheap
P = SaliencyDiagonal(np.array([0.01, 50.0, 1.0, 1.0, 1.0, 1.0]), mode="snip")
print("keep 3, weighted:  ", p_weighted_projection(v, 3, P).values)

# structured 1-of-2: every consecutive pair keeps its larger entry
print("1:2 pattern:       ", nm_projection(v, 1, 2).values)

# targets carry the same information declaratively
for target in (SparsityTarget.from_count(3),
               SparsityTarget.from_fraction(0.5),
               SparsityTarget.n_of_m(1, 2)):
    out = project_to_target(v, target)
    print(f"target {target.describe():<12} -> "
          f"{np.count_nonzero(out.values)} nonzero, {out.values}")

# biases and other protected segments pass through untouched: the keep
# quota applies to the sparsifiable coordinates only
layout = (Segment("weights", 0, 4, True), Segment("bias", 4, 2, False))
pv = ParamVector(np.array([0.1, -4.0, 0.2, 3.0, 9.0, -9.0]), layout)
print("with protected bias segment:", hard_threshold(pv, 2).values)
