"""Reconstruction-error pruning of one linear layer, four methods.

The score is the layer's output reconstruction error REM(W) =
||A (W - W0)||_F^2 / n over a fixed activation batch, so methods are
directly comparable. Activations are synthetic but anisotropic, which is
what separates activation-aware scores from plain magnitude.
"""

import numpy as np

from safeopt import (LinearLayer, RemPruneConfig, SparsityTarget,
                     prune_layer, synth_activations)

rng = np.random.default_rng(0)
layer = LinearLayer(W=rng.standard_normal((64, 64)) * 0.1, name="fc1")
acts = synth_activations(256, 64, seed=1)
energy = np.linalg.norm(acts.matrix, axis=0)
print(f"activation column energy: max {energy.max():.2f}, "
      f"min {energy.min():.2f} (anisotropic by construction)\n")

cfg = RemPruneConfig(seed=0)
print(f"{'method':<10} {'target':<6} {'REM':>10} {'kept':>6} {'steps':>6}")
half = SparsityTarget.from_fraction(0.5)
for method in ("magnitude", "wanda", "safe", "safe-plus"):
    rep = prune_layer(layer, acts, half, method, cfg)
    print(f"{method:<10} {rep.target:<6} {rep.rem_value:>10.6f} "
          f"{rep.kept:>6} {rep.steps_run:>6}")

# the structured variant keeps 2 of every 4 weights along the input dim
nm = SparsityTarget.n_of_m(2, 4)
for method in ("magnitude", "safe-plus"):
    rep = prune_layer(layer, acts, nm, method, cfg)
    print(f"{method:<10} {rep.target:<6} {rep.rem_value:>10.6f} "
          f"{rep.kept:>6} {rep.steps_run:>6}  pattern_ok={rep.pattern_ok}")
