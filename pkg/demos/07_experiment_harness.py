"""End-to-end harness: configure, run seeds, report, diagnose.

Everything here is also reachable from the command line:

    safeopt train --config cfg.json
    safeopt report runs/quad_demo --out report/
    safeopt diagnose runs/quad_demo/seed_0/checkpoint_sparse.bin
    safeopt verify --scope all

This script drives the same functions in process on a small quadratic
so it finishes in a few seconds.
"""

import json
from pathlib import Path
from tempfile import mkdtemp

from safeopt import (ExperimentConfig, diagnose_checkpoint, export_report,
                     load_checkpoint, run_experiment)

root = Path(mkdtemp(prefix="safeopt_demo_"))
# sparsity 0.5 on n = 8 keeps d = 4, matching the certificate; penalty
# 40 is 4x the worst-case curvature of the generated family and lr sits
# at the matching stability bound 1 / (beta + penalty)
cfg = ExperimentConfig.from_dict({
    "name": "quad_demo",
    "method": "safe",
    "seeds": [0, 1],
    "out_dir": str(root / "runs"),
    "model": {"kind": "quadratic", "n": 8, "d": 4, "seed": 0},
    "optim": {"steps": 2000, "lr": 0.02, "rho": 0.05, "penalty": 40.0,
              "dual_interval": 8, "sparsity": 0.5, "log_every": 100},
})

run_dir = run_experiment(cfg).root
print("artifacts in", run_dir)
for p in sorted(run_dir.rglob("*")):
    if p.is_file():
        print("  ", p.relative_to(run_dir))

agg = json.loads((run_dir / "aggregate.json").read_text())
print("\naggregate:", json.dumps(agg, indent=2)[:400], "...")

paths = export_report([run_dir], root / "report")
print("\nreport files:", [paths.losses_csv.name, paths.weights_csv.name,
                          paths.summary_md.name])

ckpt = run_dir / "seed_0" / "checkpoint_sparse.bin"
x, header = load_checkpoint(ckpt)
print(f"\ncheckpoint: {x.nonzero_count()} nonzero of {x.n}, "
      f"config_hash {header['config_hash'][:12]}")

diag = diagnose_checkpoint(cfg, ckpt, out_dir=root / "diag",
                           landscape_radius=0.5)
print("diagnosis:", {k: round(v, 6) if isinstance(v, float) else str(v)
                     for k, v in diag.items()})
