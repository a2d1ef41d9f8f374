"""Command-line entry point.

Subcommands: train, eval, landscape, gradcheck, synth. Logs go to stderr;
machine-readable outputs go to files only. Exit codes: 0 success, 1 gradient
audit failure, 2 config validation failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import RunConfig
from .errors import (
    CorruptHeader,
    EmptyDataset,
    InvalidConfig,
    MambasegError,
    TruncatedPayload,
    VersionMismatch,
)

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_IO = 3

GRADCHECK_TOL = 1e-4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _cmd_train(args) -> int:
    from .training import run_training

    cfg = RunConfig.from_json_file(args.config)
    result = run_training(cfg, write_artifacts=True, log=_log)
    _log(
        f"done: best val DSC {result.best_val_dsc:.4f}, "
        f"artifacts in {cfg.output_dir}"
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .synthdata import read_dataset
    from .training import evaluate, load_trained

    net, _, cfg, extra = load_trained(args.checkpoint)
    samples = read_dataset(args.data)
    report = evaluate(
        net, samples, extra={"config_hash": extra.get("config_hash", ""), "checkpoint": args.checkpoint}
    )
    doc = report.to_json_dict()
    print(json.dumps(doc, indent=1, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
    if args.csv:
        report.write_rows_csv(args.csv)
    return EXIT_OK


def _cmd_landscape(args) -> int:
    from .landscape import evaluate_grid, sample_directions, write_grid_csv, write_grid_json, write_grid_pgm
    from .synthdata import read_dataset
    from .training import dataset_loss, load_trained

    net, ua_state, cfg, extra = load_trained(args.checkpoint)
    samples = read_dataset(args.data)
    mode = cfg.loss.mode
    params = dict(net.params())
    d1, d2 = sample_directions(params, args.direction_seed)
    grid = evaluate_grid(
        params,
        d1,
        d2,
        extent=args.extent,
        steps=args.steps,
        loss_fn=lambda: dataset_loss(net, samples, mode, ua_state, cfg.loss.gamma),
        direction_seed=args.direction_seed,
    )
    os.makedirs(args.out, exist_ok=True)
    meta = {"config_hash": extra.get("config_hash", ""), "checkpoint": args.checkpoint}
    write_grid_csv(grid, os.path.join(args.out, "landscape.csv"))
    write_grid_json(grid, os.path.join(args.out, "landscape.json"), metadata=meta)
    write_grid_pgm(grid, os.path.join(args.out, "landscape.pgm"))
    _log(f"grid {args.steps}x{args.steps} extent {args.extent} written to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .engine.gradcheck import AUDIT_CASES, audit_ops
    from .gradaudit import MODULE_AUDITS, run_module_audit

    failures = 0
    if args.module in (None, "engine"):
        kinds = list(AUDIT_CASES)
        results = audit_ops(kinds, n_trials=args.trials, seed=args.seed)
        for kind, err in results.items():
            ok = err < GRADCHECK_TOL
            failures += not ok
            print(f"{'PASS' if ok else 'FAIL'} engine/{kind}: max_rel_err {err:.3e}")
    for module, audit in MODULE_AUDITS.items():
        if args.module not in (None, module):
            continue
        for name, err in run_module_audit(module, seed=args.seed):
            ok = err < GRADCHECK_TOL
            failures += not ok
            print(f"{'PASS' if ok else 'FAIL'} {module}/{name}: max_rel_err {err:.3e}")
    if failures:
        _log(f"{failures} gradient audit(s) exceeded {GRADCHECK_TOL}")
        return EXIT_GRADCHECK
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .synthdata import SynthConfig, generate_dataset, write_dataset

    cfg = SynthConfig(
        K=args.classes,
        shape=tuple(args.shape),
        noise_sigma=args.noise_sigma,
        deform=args.deform,
    )
    samples = generate_dataset(cfg, args.seed, args.n)
    write_dataset(samples, args.out)
    _log(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mambaseg", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="also write the report JSON here")
    p.add_argument("--csv", default=None, help="write per-sample metric rows here")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("landscape", help="sample the 2-D loss surface around a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--direction-seed", type=int, default=0)
    p.set_defaults(fn=_cmd_landscape)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every differentiable op")
    p.add_argument("--module", choices=["engine", "blocks", "segnet", "losses"], default=None)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("synth", help="materialize a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--shape", type=int, nargs="+", default=[64, 64])
    p.add_argument("--noise-sigma", type=float, default=0.04)
    p.add_argument("--deform", type=float, default=0.12)
    p.set_defaults(fn=_cmd_synth)
    return ap


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse's own exit; normalize help to 0
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except InvalidConfig as e:
        _log(f"config error: {e}")
        return EXIT_CONFIG
    except (CorruptHeader, TruncatedPayload, VersionMismatch, EmptyDataset, OSError) as e:
        _log(f"i/o error: {e}")
        return EXIT_IO
    except MambasegError as e:
        _log(f"error: {e}")
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
