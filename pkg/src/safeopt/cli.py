"""Command line entry points.

Five subcommands wrap the harness:

* ``safeopt train --config exp.json [--set key=value ...]``
* ``safeopt prune-layer --layer W.bin --activations A.bin --method safe-plus --sparsity 0.5``
* ``safeopt diagnose --config exp.json --checkpoint ck.bin --out diag/``
* ``safeopt report RUN_DIR [RUN_DIR ...] --out report/``
* ``safeopt verify [--scope projection|gradients|convergence|all]``

Exit codes: 0 on success, 1 when verification checks fail or a run
diverges, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import SparsityTarget
from .harness import (ConfigError, ExperimentConfig, apply_overrides,
                      diagnose_checkpoint, export_report, run_experiment,
                      verify_suite)
from .rem_pruner import (RemPruneConfig, load_activations, load_layer,
                         prune_layer, save_layer)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safeopt",
        description="Sparse training via augmented-Lagrangian splitting "
                    "with sharpness-aware steps")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run an experiment config")
    p_train.add_argument("--config", required=True, help="experiment JSON file")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config entry (dotted path, JSON value)")
    p_train.add_argument("--force", action="store_true",
                         help="rerun seeds even if results exist")
    p_train.add_argument("--out-dir", default=None,
                         help="override the config's output directory")

    p_prune = sub.add_parser("prune-layer", help="prune one linear layer")
    p_prune.add_argument("--layer", required=True, help="layer container file")
    p_prune.add_argument("--activations", required=True,
                         help="activation container file")
    p_prune.add_argument("--method", default="safe-plus",
                         choices=["magnitude", "wanda", "safe", "safe-plus"])
    group = p_prune.add_mutually_exclusive_group(required=True)
    group.add_argument("--sparsity", type=float, help="fraction to zero out")
    group.add_argument("--pattern", help="structured pattern, e.g. 2:4")
    p_prune.add_argument("--steps", type=int, default=2000)
    p_prune.add_argument("--seed", type=int, default=0)
    p_prune.add_argument("--out", default=None, help="write the report JSON here")
    p_prune.add_argument("--save-layer", default=None,
                         help="write the pruned layer container here")

    p_diag = sub.add_parser("diagnose", help="sharpness / landscape / "
                                             "stationarity at a checkpoint")
    p_diag.add_argument("--config", required=True)
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--out", default="diagnostics")
    p_diag.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_diag.add_argument("--no-hessian", action="store_true")
    p_diag.add_argument("--landscape-radius", type=float, default=0.0)
    p_diag.add_argument("--grid-points", type=int, default=21)
    p_diag.add_argument("--stationarity-delta", type=float, default=None)
    p_diag.add_argument("--seed", type=int, default=0)

    p_rep = sub.add_parser("report", help="merge runs into CSVs + markdown")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", required=True)

    p_ver = sub.add_parser("verify", help="run the self-verification suite")
    p_ver.add_argument("--scope", default="all",
                       choices=["projection", "gradients", "convergence", "all"])
    p_ver.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(path: str, overrides) -> ExperimentConfig:
    config = ExperimentConfig.from_json_file(path)
    if overrides:
        d = apply_overrides(config.to_dict(), overrides)
        config = ExperimentConfig.from_dict(d)
    return config


def _cmd_train(args) -> int:
    config = _load_config(args.config, args.set)
    if args.out_dir:
        config.out_dir = args.out_dir
    result = run_experiment(config, force=args.force)
    diverged = 0
    for s in result.summaries:
        if s.get("diverged"):
            diverged += 1
            print(f"seed {s['seed']}: DIVERGED at step {s['snapshot']['step']}")
        else:
            metrics = "; ".join(f"{k}={v:.4g}" for k, v in
                                sorted(s.get("metrics", {}).items()))
            print(f"seed {s['seed']}: sparsity={s['sparsity']:.4f} "
                  f"final_loss={s['final_loss']} {metrics}")
    print(f"outputs in {result.root}")
    return 1 if diverged else 0


def _parse_pattern(text: str) -> SparsityTarget:
    try:
        n_keep, m = text.split(":")
        return SparsityTarget.n_of_m(int(n_keep), int(m))
    except (ValueError, TypeError):
        raise ConfigError(f"pattern must look like 2:4, got {text!r}") from None


def _cmd_prune_layer(args) -> int:
    layer = load_layer(args.layer)
    acts = load_activations(args.activations)
    target = (_parse_pattern(args.pattern) if args.pattern
              else SparsityTarget.from_fraction(args.sparsity))
    config = RemPruneConfig(steps=args.steps, seed=args.seed)
    report = prune_layer(layer, acts, target, args.method, config)
    payload = report.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    if args.save_layer:
        save_layer(args.save_layer, report.layer)
    return 0


def _cmd_diagnose(args) -> int:
    config = _load_config(args.config, args.set)
    report = diagnose_checkpoint(
        config, args.checkpoint, args.out,
        hessian=not args.no_hessian,
        landscape_radius=args.landscape_radius,
        grid_points=args.grid_points,
        stationarity_delta=args.stationarity_delta,
        seed=args.seed)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    paths = export_report(args.run_dirs, args.out)
    print(f"wrote {paths.losses_csv}")
    print(f"wrote {paths.weights_csv}")
    print(f"wrote {paths.summary_md}")
    return 0


def _cmd_verify(args) -> int:
    report = verify_suite(scope=args.scope, seed=args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": _cmd_train, "prune-layer": _cmd_prune_layer,
                "diagnose": _cmd_diagnose, "report": _cmd_report,
                "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
