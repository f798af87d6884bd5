"""All training methods on one certified quadratic, side by side.

Small enough to run in a second, yet the ranking logic is the same one
the dataset-scale comparisons use: every method returns a TrainResult
whose x_sparse meets the target, and the certified f* anchors the scores.
"""

import numpy as np

from safeopt import (BaselineConfig, Schedule, admm_config,
                     magnitude_prune_oneshot, run_cram, run_imp_sam, run_safe)
from safeopt.harness import TestProblem, convergence_run_config

problem = TestProblem.generate(n=12, d=4, seed=11)
oracle, target = problem.oracle, problem.target
steps = 3000
x0 = oracle.init_params(seed=0)

safe_cfg = convergence_run_config(problem, steps=steps)
lr = safe_cfg.lr  # reuse the stability-safe learning rate everywhere

runs = {}
runs["safe"] = run_safe(oracle, None, safe_cfg, x_init=x0)
runs["admm"] = run_safe(oracle, None, admm_config(safe_cfg), x_init=x0)

imp = BaselineConfig(steps=steps, target=target, lr=lr, rho=0.05,
                     prune_interval=400, prune_schedule="cubic", seed=0)
runs["imp-sam"] = run_imp_sam(oracle, None, imp, x_init=x0)

cram = BaselineConfig(steps=steps, target=target, lr=lr, rho=0.05, seed=0)
runs["cram"] = run_cram(oracle, None, cram, x_init=x0)
runs["cram-plus"] = run_cram(oracle, None,
                             BaselineConfig(steps=steps, target=target, lr=lr,
                                            rho=0.05, plus=True, seed=0),
                             x_init=x0)

print(f"certified f* = {problem.f_opt:.6f} at support "
      f"{np.nonzero(problem.x_opt)[0]}\n")
print(f"{'method':<22} {'f(x_sparse)':>12} {'gap to f*':>12} {'support'}")

dense_pruned = magnitude_prune_oneshot(runs["admm"].x_dense, target)
rows = [("one-shot (admm dense)", oracle.value(dense_pruned), dense_pruned)]
rows += [(name, oracle.value(r.x_sparse), r.x_sparse) for name, r in runs.items()]
for name, val, x in sorted(rows, key=lambda r: r[1]):
    print(f"{name:<22} {val:>12.6f} {val - problem.f_opt:>12.2e} "
          f"{np.nonzero(x.values)[0]}")
